//! The synthesized KB: types and relationships mined from the lake itself.
//!
//! Every textual column gets its own synthesized type `CS(table#col)` and
//! every column pair in a unary FD gets its own synthesized relationship
//! `RS(table#i,j)`. Only values (pairs) the external KB does not cover take
//! part. A column whose values overlap another column's inherits that
//! column's type with a score equal to the overlap fraction; pairs work the
//! same way.
//!
//! Construction runs in two passes. The first records, for every value and
//! value pair, the columns and column pairs it occurs in (the lookup
//! dictionary). The second scores each value against every column that
//! overlaps one of its host columns and keeps the maximum per synthesized id.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::fd::UnaryFd;
use crate::kb::KbStore;
use crate::lake::{LakeTable, ValuePair};
use crate::numfmt::{format_sig12, round_sig12};
use crate::semantics::AnnotationSet;

/// Canonical name of a synthesized type or relationship.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SynthId(String);

impl SynthId {
    pub fn column(table_id: &str, column: usize) -> Self {
        Self(format!("CS({table_id}#{column})"))
    }

    pub fn pair(table_id: &str, left: usize, right: usize) -> Self {
        Self(format!("RS({table_id}#{left},{right})"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SynthId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub type SynthScores = BTreeMap<SynthId, f64>;

/// The synthesized type and relationship dictionaries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynthKb {
    pub type_dict: BTreeMap<String, SynthScores>,
    pub rel_dict: BTreeMap<ValuePair, SynthScores>,
}

impl SynthKb {
    pub fn is_empty(&self) -> bool {
        self.type_dict.is_empty() && self.rel_dict.is_empty()
    }

    pub fn types_of_value(&self, v: &str) -> Option<&SynthScores> {
        self.type_dict.get(v)
    }

    pub fn predicates_of_pair(&self, p: &ValuePair) -> Option<&SynthScores> {
        self.rel_dict.get(p)
    }

    /// `synth_type_dict.json`: value -> {synth id -> score string}.
    pub fn type_dict_json(&self) -> String {
        let doc: BTreeMap<&str, BTreeMap<&str, String>> = self
            .type_dict
            .iter()
            .map(|(v, s)| (v.as_str(), render_scores(s)))
            .collect();
        serde_json::to_string_pretty(&doc).expect("string maps serialize") + "\n"
    }

    /// `synth_rel_dict.json`: list of {left, right, semantics} sorted by pair.
    pub fn rel_dict_json(&self) -> String {
        let doc: Vec<RelEntry> = self
            .rel_dict
            .iter()
            .map(|(p, s)| RelEntry {
                left: p.left.clone(),
                right: p.right.clone(),
                semantics: render_scores(s).into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            })
            .collect();
        serde_json::to_string_pretty(&doc).expect("entries serialize") + "\n"
    }

    pub fn from_json(type_json: &str, rel_json: &str) -> Result<Self, String> {
        let types: BTreeMap<String, BTreeMap<String, String>> =
            serde_json::from_str(type_json).map_err(|e| format!("synth type dictionary: {e}"))?;
        let rels: Vec<RelEntry> = serde_json::from_str(rel_json).map_err(|e| format!("synth rel dictionary: {e}"))?;
        let mut kb = SynthKb::default();
        for (v, s) in types {
            kb.type_dict.insert(v, parse_scores(s)?);
        }
        for e in rels {
            kb.rel_dict.insert(ValuePair::new(e.left, e.right), parse_scores(e.semantics)?);
        }
        Ok(kb)
    }
}

#[derive(Serialize, Deserialize)]
struct RelEntry {
    left: String,
    right: String,
    semantics: BTreeMap<String, String>,
}

fn render_scores(s: &SynthScores) -> BTreeMap<&str, String> {
    s.iter().map(|(id, &x)| (id.as_str(), format_sig12(x))).collect()
}

fn parse_scores(s: BTreeMap<String, String>) -> Result<SynthScores, String> {
    s.into_iter()
        .map(|(id, x)| {
            x.parse::<f64>()
                .map(|x| (SynthId(id), x))
                .map_err(|e| format!("bad score {x:?}: {e}"))
        })
        .collect()
}

pub fn synth_types_of_value(s: &SynthKb, v: &str) -> SynthScores {
    s.types_of_value(v).cloned().unwrap_or_default()
}

pub fn synth_predicates_of_pair(s: &SynthKb, p: &ValuePair) -> SynthScores {
    s.predicates_of_pair(p).cloned().unwrap_or_default()
}

/// First-pass result: which KB-uncovered values and value pairs live in
/// which synthesized column / column pair.
#[derive(Debug, Clone, Default)]
pub struct LookupDictionary {
    column_members: BTreeMap<SynthId, BTreeSet<String>>,
    pair_members: BTreeMap<SynthId, BTreeSet<ValuePair>>,
    value_hosts: BTreeMap<String, BTreeSet<SynthId>>,
    pair_hosts: BTreeMap<ValuePair, BTreeSet<SynthId>>,
}

impl LookupDictionary {
    /// `kb = None` treats every value as uncovered.
    pub fn build(lake: &[LakeTable], kb: Option<&KbStore>, fds: &BTreeMap<String, BTreeSet<UnaryFd>>) -> Self {
        let mut d = LookupDictionary::default();
        for t in lake {
            for col in t.textual_columns() {
                let members: BTreeSet<String> = col
                    .unique_values
                    .iter()
                    .filter(|v| kb.is_none_or(|kb| kb.types_of_value(v).is_empty()))
                    .cloned()
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let id = SynthId::column(&t.table_id, col.column_index);
                for v in &members {
                    d.value_hosts.entry(v.clone()).or_default().insert(id.clone());
                }
                d.column_members.insert(id, members);
            }
            for fd in fds.get(&t.table_id).into_iter().flatten() {
                let Ok(pairs) = t.unique_value_pairs(fd.determinant, fd.dependent) else {
                    continue;
                };
                let members: BTreeSet<ValuePair> = pairs
                    .into_iter()
                    .filter(|p| kb.is_none_or(|kb| kb.predicates_of_pair(p).is_empty()))
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let id = SynthId::pair(&t.table_id, fd.determinant, fd.dependent);
                for p in &members {
                    d.pair_hosts.entry(p.clone()).or_default().insert(id.clone());
                }
                d.pair_members.insert(id, members);
            }
        }
        d
    }

    pub fn column_members(&self, id: &SynthId) -> Option<&BTreeSet<String>> {
        self.column_members.get(id)
    }

    pub fn pair_members(&self, id: &SynthId) -> Option<&BTreeSet<ValuePair>> {
        self.pair_members.get(id)
    }

    pub fn columns(&self) -> impl Iterator<Item = &SynthId> {
        self.column_members.keys()
    }

    pub fn pairs(&self) -> impl Iterator<Item = &SynthId> {
        self.pair_members.keys()
    }

    /// Column-level synthesized semantics of `host`: itself with 1 and every
    /// overlapping column `c_j` with `|host ∩ c_j| / |host|`.
    pub fn column_confidences(&self, host: &SynthId) -> AnnotationSet {
        overlap_confidences(host, self.column_members.get(host), &self.value_hosts)
    }

    /// Pair-level counterpart of [`Self::column_confidences`].
    pub fn pair_confidences(&self, host: &SynthId) -> AnnotationSet {
        overlap_confidences(host, self.pair_members.get(host), &self.pair_hosts)
    }

    /// Second pass: scores every value (pair) against the synthesized ids of
    /// columns (pairs) overlapping any of its hosts, keeping the maximum.
    pub fn score(&self) -> SynthKb {
        let mut kb = SynthKb::default();
        for (host, members) in &self.column_members {
            let conf = self.column_confidences(host);
            for v in members {
                merge_max(kb.type_dict.entry(v.clone()).or_default(), &conf);
            }
        }
        for (host, members) in &self.pair_members {
            let conf = self.pair_confidences(host);
            for p in members {
                merge_max(kb.rel_dict.entry(p.clone()).or_default(), &conf);
            }
        }
        kb
    }
}

fn overlap_confidences<K: Ord>(
    host: &SynthId,
    members: Option<&BTreeSet<K>>,
    hosts: &BTreeMap<K, BTreeSet<SynthId>>,
) -> AnnotationSet {
    let mut out = AnnotationSet::new();
    let Some(members) = members else {
        return out;
    };
    let mut overlap: BTreeMap<&SynthId, usize> = BTreeMap::new();
    for m in members {
        for other in hosts.get(m).into_iter().flatten() {
            if other != host {
                *overlap.entry(other).or_default() += 1;
            }
        }
    }
    let size = members.len() as f64;
    out.insert(host.as_str(), 1.0);
    for (other, n) in overlap {
        out.insert(other.as_str(), n as f64 / size);
    }
    out
}

fn merge_max(into: &mut SynthScores, conf: &AnnotationSet) {
    for (id, x) in conf.iter() {
        let x = round_sig12(x);
        let slot = into.entry(SynthId(id.to_string())).or_insert(x);
        if x > *slot {
            *slot = x;
        }
    }
}

pub fn build_synth_kb(lake: &[LakeTable], kb: Option<&KbStore>, fds: &BTreeMap<String, BTreeSet<UnaryFd>>) -> SynthKb {
    LookupDictionary::build(lake, kb, fds).score()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd::discover_unary_fds;
    use crate::kb::KbBuilder;

    fn table(id: &str, rows: &[[&str; 2]]) -> LakeTable {
        let rows: Vec<Vec<&str>> = rows.iter().map(|r| r.to_vec()).collect();
        LakeTable::from_rows(id, &["x", "y"], &rows).unwrap()
    }

    fn fds_of(lake: &[LakeTable]) -> BTreeMap<String, BTreeSet<UnaryFd>> {
        lake.iter().map(|t| (t.table_id.clone(), discover_unary_fds(t))).collect()
    }

    #[test]
    fn own_column_only() {
        let lake = vec![table("t1", &[["solo", "a"]])];
        let kb = build_synth_kb(&lake, None, &fds_of(&lake));
        let s = synth_types_of_value(&kb, "solo");
        assert_eq!(s.len(), 1);
        assert_eq!(s[&SynthId::column("t1", 0)], 1.0);
        assert!(synth_types_of_value(&kb, "unknown").is_empty());
        assert!(synth_predicates_of_pair(&kb, &ValuePair::new("solo", "nope")).is_empty());
    }

    #[test]
    fn foreign_column_overlap_fraction() {
        // {x,y,z} and {x,y,w}: z inherits the second column's type at 2/3.
        let lake = vec![
            table("t1", &[["x", "1a"], ["y", "1b"], ["z", "1c"]]),
            table("t2", &[["x", "2a"], ["y", "2b"], ["w", "2c"]]),
        ];
        let kb = build_synth_kb(&lake, None, &fds_of(&lake));
        let z = synth_types_of_value(&kb, "z");
        assert_eq!(z[&SynthId::column("t1", 0)], 1.0);
        assert_eq!(z[&SynthId::column("t2", 0)], round_sig12(2.0 / 3.0));
        let x = synth_types_of_value(&kb, "x");
        assert_eq!(x[&SynthId::column("t1", 0)], 1.0);
        assert_eq!(x[&SynthId::column("t2", 0)], 1.0);
    }

    #[test]
    fn kb_covered_values_are_excluded() {
        let mut b = KbBuilder::new();
        b.subtype("place", "thing").label("x", "ex").entity_type("ex", "place");
        b.label("1a", "e1a").entity_type("e1a", "place").fact("ex", "near", "e1a");
        let kbs = b.build().unwrap();
        let lake = vec![table("t1", &[["x", "1a"], ["y", "1b"]])];
        let s = build_synth_kb(&lake, Some(&kbs), &fds_of(&lake));
        assert!(s.types_of_value("x").is_none());
        assert!(s.types_of_value("y").is_some());
        assert!(s.predicates_of_pair(&ValuePair::new("x", "1a")).is_none());
        assert!(s.predicates_of_pair(&ValuePair::new("y", "1b")).is_some());
    }

    #[test]
    fn relationships_require_fd() {
        let lake = vec![table("t1", &[["a", "p"], ["a", "q"], ["b", "q"]])];
        let fds = fds_of(&lake);
        let s = build_synth_kb(&lake, None, &fds);
        // y -> x fails (q maps to a and b); x -> y fails (a maps to p and q).
        assert!(s.rel_dict.is_empty());
        assert!(!s.type_dict.is_empty());
    }

    #[test]
    fn json_round_trip() {
        let lake = vec![
            table("t1", &[["x", "1a"], ["y", "1b"], ["z", "1c"]]),
            table("t2", &[["x", "1a"], ["y", "2b"], ["w", "2c"]]),
        ];
        let kb = build_synth_kb(&lake, None, &fds_of(&lake));
        let back = SynthKb::from_json(&kb.type_dict_json(), &kb.rel_dict_json()).unwrap();
        assert_eq!(back, kb);
        assert!(kb.type_dict_json().contains("\"0.666666666667\""));
    }

    #[test]
    fn empty_lake() {
        let kb = build_synth_kb(&[], None, &BTreeMap::new());
        assert!(kb.is_empty());
    }
}
