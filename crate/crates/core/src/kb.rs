//! Knowledge-base dictionaries loaded from TSV fixtures.
//!
//! A KB directory holds four tab-separated files:
//!
//! | file            | columns                                  |
//! |-----------------|------------------------------------------|
//! | `entities.tsv`  | label, entity-id                         |
//! | `types.tsv`     | entity-id, type-id                       |
//! | `hierarchy.tsv` | child type-id, parent type-id            |
//! | `facts.tsv`     | subject-id, predicate-id, object-id      |
//!
//! An optional `type_counts.tsv` (type-id, count) supplies KB-wide entity
//! counts for types when the fixture is a small slice of a larger KB. Lines
//! starting with `#` are comments.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lake::{normalize_value, ValuePair};

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            /// Trims and lowercases the raw identifier.
            pub fn new(raw: &str) -> Self {
                Self(raw.trim().to_lowercase())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(raw: &str) -> Self {
                Self::new(raw)
            }
        }
    };
}

id_type!(
    /// A KB type, e.g. `city`.
    TypeId
);
id_type!(
    /// A KB binary predicate, e.g. `birthplace`.
    PredicateId
);
id_type!(EntityId);

#[derive(Debug, Error)]
pub enum KbError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Format { path: PathBuf, line: usize, reason: String },
    #[error("type hierarchy has a cycle through {0}")]
    Cycle(TypeId),
    #[error("type hierarchy has more than one root: {0:?}")]
    MultiRoot(Vec<TypeId>),
    #[error("undeclared {kind} referenced: {id}")]
    DanglingRef { kind: &'static str, id: String },
}

/// The four KB dictionaries plus per-type and per-predicate statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KbStore {
    entity_dict: BTreeMap<String, BTreeSet<EntityId>>,
    type_dict: BTreeMap<EntityId, BTreeSet<TypeId>>,
    inheritance: BTreeMap<TypeId, TypeId>,
    root: Option<TypeId>,
    top_level_types: BTreeSet<TypeId>,
    type_counts: BTreeMap<TypeId, u64>,
    relationship_dict: BTreeMap<(EntityId, EntityId), BTreeSet<PredicateId>>,
    predicate_counts: BTreeMap<PredicateId, u64>,
}

impl KbStore {
    pub fn root(&self) -> Option<&TypeId> {
        self.root.as_ref()
    }

    pub fn top_level_types(&self) -> &BTreeSet<TypeId> {
        &self.top_level_types
    }

    pub fn parent(&self, t: &TypeId) -> Option<&TypeId> {
        self.inheritance.get(t)
    }

    pub fn type_count(&self, t: &TypeId) -> Option<u64> {
        self.type_counts.get(t).copied()
    }

    pub fn predicate_count(&self, p: &PredicateId) -> u64 {
        self.predicate_counts.get(p).copied().unwrap_or(0)
    }

    pub fn entities_of_label(&self, label: &str) -> Option<&BTreeSet<EntityId>> {
        self.entity_dict.get(label)
    }

    pub fn is_empty(&self) -> bool {
        self.entity_dict.is_empty()
    }

    /// The top-level type above `t`, or `t` itself when it is top-level.
    /// `None` for the root and for types outside the hierarchy.
    pub fn top_level_of(&self, t: &TypeId) -> Option<&TypeId> {
        let mut cur = self.known(t)?;
        loop {
            if self.top_level_types.contains(cur) {
                return Some(cur);
            }
            cur = self.inheritance.get(cur)?;
        }
    }

    /// True when `ancestor` equals `t` or lies on its parent chain.
    pub fn is_same_or_ancestor(&self, ancestor: &TypeId, t: &TypeId) -> bool {
        let mut cur = Some(t);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.inheritance.get(c);
        }
        false
    }

    fn known<'a>(&'a self, t: &TypeId) -> Option<&'a TypeId> {
        self.type_counts.get_key_value(t).map(|(k, _)| k)
    }

    /// Types of every entity labelled `value`, each with its ancestors up to
    /// (and including) a top-level type. The root is never included.
    pub fn types_of_value(&self, value: &str) -> BTreeSet<TypeId> {
        let mut out = BTreeSet::new();
        let Some(entities) = self.entity_dict.get(value) else {
            return out;
        };
        for e in entities {
            for t in self.type_dict.get(e).into_iter().flatten() {
                let mut cur = Some(t);
                while let Some(c) = cur {
                    if Some(c) == self.root.as_ref() {
                        break;
                    }
                    out.insert(c.clone());
                    if self.top_level_types.contains(c) {
                        break;
                    }
                    cur = self.inheritance.get(c);
                }
            }
        }
        out
    }

    /// Predicates linking some entity labelled `pair.left` to some entity
    /// labelled `pair.right`, in that direction only.
    pub fn predicates_of_pair(&self, pair: &ValuePair) -> BTreeSet<PredicateId> {
        let mut out = BTreeSet::new();
        let (Some(ls), Some(rs)) = (self.entity_dict.get(&pair.left), self.entity_dict.get(&pair.right)) else {
            return out;
        };
        for l in ls {
            for r in rs {
                if let Some(ps) = self.relationship_dict.get(&(l.clone(), r.clone())) {
                    out.extend(ps.iter().cloned());
                }
            }
        }
        out
    }
}

/// In-memory construction of a [`KbStore`]; the TSV loader feeds one of these.
#[derive(Debug, Default, Clone)]
pub struct KbBuilder {
    labels: Vec<(String, EntityId)>,
    types: Vec<(EntityId, TypeId)>,
    edges: Vec<(TypeId, TypeId)>,
    facts: Vec<(EntityId, PredicateId, EntityId)>,
    count_overrides: BTreeMap<TypeId, u64>,
}

impl KbBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn label(&mut self, label: &str, entity: &str) -> &mut Self {
        self.labels.push((normalize_value(label), EntityId::new(entity)));
        self
    }

    pub fn entity_type(&mut self, entity: &str, ty: &str) -> &mut Self {
        self.types.push((EntityId::new(entity), TypeId::new(ty)));
        self
    }

    pub fn subtype(&mut self, child: &str, parent: &str) -> &mut Self {
        self.edges.push((TypeId::new(child), TypeId::new(parent)));
        self
    }

    pub fn fact(&mut self, subject: &str, predicate: &str, object: &str) -> &mut Self {
        self.facts
            .push((EntityId::new(subject), PredicateId::new(predicate), EntityId::new(object)));
        self
    }

    /// Raises the entity count of `ty` to at least `count`.
    pub fn type_count(&mut self, ty: &str, count: u64) -> &mut Self {
        self.count_overrides.insert(TypeId::new(ty), count);
        self
    }

    pub fn build(&self) -> Result<KbStore, KbError> {
        let mut inheritance: BTreeMap<TypeId, TypeId> = BTreeMap::new();
        let mut all_types: BTreeSet<TypeId> = BTreeSet::new();
        for (child, parent) in &self.edges {
            if child == parent {
                return Err(KbError::Cycle(child.clone()));
            }
            if let Some(prev) = inheritance.get(child) {
                if prev != parent {
                    return Err(KbError::Format {
                        path: PathBuf::from("hierarchy.tsv"),
                        line: 0,
                        reason: format!("type {child} has two parents ({prev}, {parent})"),
                    });
                }
            }
            inheritance.insert(child.clone(), parent.clone());
            all_types.insert(child.clone());
            all_types.insert(parent.clone());
        }

        for start in &all_types {
            let mut seen = BTreeSet::new();
            let mut cur = start;
            while let Some(p) = inheritance.get(cur) {
                if !seen.insert(cur) {
                    return Err(KbError::Cycle(cur.clone()));
                }
                cur = p;
            }
        }

        let roots: Vec<TypeId> = all_types
            .iter()
            .filter(|t| !inheritance.contains_key(*t))
            .cloned()
            .collect();
        if roots.len() > 1 {
            return Err(KbError::MultiRoot(roots));
        }
        let root = roots.into_iter().next();
        let top_level_types: BTreeSet<TypeId> = inheritance
            .iter()
            .filter(|(_, p)| Some(*p) == root.as_ref())
            .map(|(c, _)| c.clone())
            .collect();

        let mut entity_dict: BTreeMap<String, BTreeSet<EntityId>> = BTreeMap::new();
        let mut declared: BTreeSet<&EntityId> = BTreeSet::new();
        for (label, e) in &self.labels {
            if label.is_empty() {
                continue;
            }
            entity_dict.entry(label.clone()).or_default().insert(e.clone());
            declared.insert(e);
        }

        let mut type_dict: BTreeMap<EntityId, BTreeSet<TypeId>> = BTreeMap::new();
        for (e, t) in &self.types {
            if !declared.contains(e) {
                return Err(KbError::DanglingRef {
                    kind: "entity",
                    id: e.to_string(),
                });
            }
            if !all_types.contains(t) {
                return Err(KbError::DanglingRef {
                    kind: "type",
                    id: t.to_string(),
                });
            }
            type_dict.entry(e.clone()).or_default().insert(t.clone());
        }

        let mut members: BTreeMap<TypeId, BTreeSet<&EntityId>> =
            all_types.iter().map(|t| (t.clone(), BTreeSet::new())).collect();
        for (e, ts) in &type_dict {
            for t in ts {
                let mut cur = Some(t);
                while let Some(c) = cur {
                    members.get_mut(c).expect("type declared").insert(e);
                    cur = inheritance.get(c);
                }
            }
        }
        let mut type_counts: BTreeMap<TypeId, u64> =
            members.into_iter().map(|(t, es)| (t, es.len() as u64)).collect();
        for (t, &count) in &self.count_overrides {
            if !all_types.contains(t) {
                return Err(KbError::DanglingRef {
                    kind: "type",
                    id: t.to_string(),
                });
            }
            let mut cur = Some(t);
            while let Some(c) = cur {
                let slot = type_counts.get_mut(c).expect("type declared");
                *slot = (*slot).max(count);
                cur = inheritance.get(c);
            }
        }

        let mut relationship_dict: BTreeMap<(EntityId, EntityId), BTreeSet<PredicateId>> = BTreeMap::new();
        let mut predicate_pairs: BTreeMap<PredicateId, BTreeSet<(&EntityId, &EntityId)>> = BTreeMap::new();
        for (s, p, o) in &self.facts {
            for e in [s, o] {
                if !declared.contains(e) {
                    return Err(KbError::DanglingRef {
                        kind: "entity",
                        id: e.to_string(),
                    });
                }
            }
            relationship_dict
                .entry((s.clone(), o.clone()))
                .or_default()
                .insert(p.clone());
            predicate_pairs.entry(p.clone()).or_default().insert((s, o));
        }
        let predicate_counts = predicate_pairs
            .into_iter()
            .map(|(p, pairs)| (p, pairs.len() as u64))
            .collect();

        Ok(KbStore {
            entity_dict,
            type_dict,
            inheritance,
            root,
            top_level_types,
            type_counts,
            relationship_dict,
            predicate_counts,
        })
    }
}

fn read_tsv(path: &Path, width: usize, required: bool) -> Result<Vec<(usize, Vec<String>)>, KbError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if !required && e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(KbError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
        if fields.len() != width || fields.iter().any(|f| f.trim().is_empty()) {
            return Err(KbError::Format {
                path: path.to_path_buf(),
                line: n + 1,
                reason: format!("expected {width} non-empty tab-separated fields"),
            });
        }
        rows.push((n + 1, fields));
    }
    Ok(rows)
}

/// Loads the KB fixture in `dir`.
pub fn load_kb(dir: &Path) -> Result<KbStore, KbError> {
    if !dir.is_dir() {
        return Err(KbError::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        });
    }
    let mut b = KbBuilder::new();
    for (_, f) in read_tsv(&dir.join("entities.tsv"), 2, true)? {
        b.label(&f[0], &f[1]);
    }
    for (_, f) in read_tsv(&dir.join("types.tsv"), 2, true)? {
        b.entity_type(&f[0], &f[1]);
    }
    for (_, f) in read_tsv(&dir.join("hierarchy.tsv"), 2, true)? {
        b.subtype(&f[0], &f[1]);
    }
    for (_, f) in read_tsv(&dir.join("facts.tsv"), 3, true)? {
        b.fact(&f[0], &f[1], &f[2]);
    }
    let counts_path = dir.join("type_counts.tsv");
    for (line, f) in read_tsv(&counts_path, 2, false)? {
        let count = f[1].trim().parse::<u64>().map_err(|e| KbError::Format {
            path: counts_path.clone(),
            line,
            reason: e.to_string(),
        })?;
        b.type_count(&f[0], count);
    }
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boston_kb() -> KbBuilder {
        let mut b = KbBuilder::new();
        b.subtype("place", "thing")
            .subtype("creative_work", "thing")
            .subtype("administrative_area", "place")
            .subtype("city", "administrative_area")
            .subtype("music_album", "creative_work")
            .label("Boston", "boston_city")
            .label("Boston", "boston_album")
            .label("Virginia", "va")
            .label("George Washington", "gw")
            .entity_type("boston_city", "city")
            .entity_type("boston_album", "music_album")
            .entity_type("va", "administrative_area")
            .entity_type("gw", "place")
            .fact("gw", "birthPlace", "va")
            .fact("va", "contains", "gw");
        b
    }

    #[test]
    fn homograph_maps_to_two_entities() {
        let kb = boston_kb().build().unwrap();
        assert_eq!(kb.entities_of_label("boston").unwrap().len(), 2);
        let types: Vec<_> = kb.types_of_value("boston").into_iter().map(|t| t.to_string()).collect();
        assert_eq!(
            types,
            vec!["administrative_area", "city", "creative_work", "music_album", "place"]
        );
        assert!(kb.types_of_value("zzz").is_empty());
    }

    #[test]
    fn top_level_types_are_root_children() {
        let kb = boston_kb().build().unwrap();
        assert_eq!(kb.root(), Some(&TypeId::new("thing")));
        let tops: Vec<_> = kb.top_level_types().iter().map(|t| t.as_str()).collect();
        assert_eq!(tops, vec!["creative_work", "place"]);
        assert_eq!(kb.top_level_of(&TypeId::new("city")), Some(&TypeId::new("place")));
        assert_eq!(kb.top_level_of(&TypeId::new("thing")), None);
    }

    #[test]
    fn top_level_entity_closure_is_singleton() {
        let kb = boston_kb().build().unwrap();
        let ts: Vec<_> = kb.types_of_value("george washington").into_iter().collect();
        assert_eq!(ts, vec![TypeId::new("place")]);
    }

    #[test]
    fn ordered_predicate_lookup() {
        let kb = boston_kb().build().unwrap();
        let fwd = kb.predicates_of_pair(&ValuePair::new("george washington", "virginia"));
        assert_eq!(fwd.into_iter().collect::<Vec<_>>(), vec![PredicateId::new("birthplace")]);
        let back = kb.predicates_of_pair(&ValuePair::new("virginia", "george washington"));
        assert_eq!(back.into_iter().collect::<Vec<_>>(), vec![PredicateId::new("contains")]);
        assert!(kb.predicates_of_pair(&ValuePair::new("nobody", "virginia")).is_empty());
        assert_eq!(kb.predicate_count(&PredicateId::new("birthplace")), 1);
    }

    #[test]
    fn counts_include_descendants() {
        let kb = boston_kb().build().unwrap();
        let c = |t: &str| kb.type_count(&TypeId::new(t)).unwrap();
        assert_eq!(c("city"), 1);
        assert_eq!(c("administrative_area"), 2);
        assert_eq!(c("place"), 3);
        assert_eq!(c("thing"), 4);
        for (child, parent) in &kb.inheritance {
            assert!(c(parent.as_str()) >= c(child.as_str()));
        }
    }

    #[test]
    fn count_overrides_propagate_upwards() {
        let mut b = boston_kb();
        b.type_count("city", 42_000);
        let kb = b.build().unwrap();
        assert_eq!(kb.type_count(&TypeId::new("city")), Some(42_000));
        assert_eq!(kb.type_count(&TypeId::new("place")), Some(42_000));
        assert_eq!(kb.type_count(&TypeId::new("music_album")), Some(1));
    }

    #[test]
    fn structural_errors() {
        let mut b = KbBuilder::new();
        b.subtype("city", "place").subtype("place", "city");
        assert!(matches!(b.build(), Err(KbError::Cycle(_))));

        let mut b = KbBuilder::new();
        b.subtype("city", "place").subtype("album", "work");
        assert!(matches!(b.build(), Err(KbError::MultiRoot(r)) if r.len() == 2));

        let mut b = boston_kb();
        b.entity_type("ghost", "city");
        assert!(matches!(b.build(), Err(KbError::DanglingRef { kind: "entity", .. })));

        let mut b = boston_kb();
        b.entity_type("gw", "planet");
        assert!(matches!(b.build(), Err(KbError::DanglingRef { kind: "type", .. })));

        let mut b = boston_kb();
        b.fact("gw", "knows", "ghost");
        assert!(matches!(b.build(), Err(KbError::DanglingRef { .. })));
    }

    #[test]
    fn load_from_tsv() {
        let dir = tempfile::tempdir().unwrap();
        let w = |name: &str, body: &str| std::fs::write(dir.path().join(name), body).unwrap();
        w("entities.tsv", "# label\tentity\nBoston\tq1\nBoston\tq2\n");
        w("types.tsv", "q1\tcity\nq2\tmusic_album\n");
        w("hierarchy.tsv", "place\tthing\ncity\tplace\ncreative_work\tthing\nmusic_album\tcreative_work\n");
        w("facts.tsv", "q2\tperformedIn\tq1\n");
        w("type_counts.tsv", "place\t6000000\n");
        let kb = load_kb(dir.path()).unwrap();
        assert_eq!(kb.entities_of_label("boston").unwrap().len(), 2);
        assert_eq!(kb.type_count(&TypeId::new("place")), Some(6_000_000));
        assert_eq!(kb.type_count(&TypeId::new("thing")), Some(6_000_000));

        w("facts.tsv", "q2\tperformedIn\n");
        assert!(matches!(load_kb(dir.path()), Err(KbError::Format { line: 1, .. })));
        assert!(matches!(load_kb(&dir.path().join("nope")), Err(KbError::Io { .. })));
    }

    #[test]
    fn adding_type_rows_is_monotone() {
        let base = boston_kb().build().unwrap();
        let mut b = boston_kb();
        b.entity_type("va", "city");
        let more = b.build().unwrap();
        for v in ["boston", "virginia", "george washington"] {
            assert!(base.types_of_value(v).is_subset(&more.types_of_value(v)));
        }
    }
}
