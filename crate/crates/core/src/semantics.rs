//! Column and relationship semantics drawn from the KB.
//!
//! A column's semantics is a set of KB types, all under one top-level type,
//! each weighted by how many of the column's mapped values carry it
//! (frequency) and, for data-lake columns, by how specific it is
//! (granularity). A column pair's semantics is the single most frequent KB
//! predicate among its mapped value pairs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{KbStore, PredicateId, TypeId};
use crate::lake::{ColumnData, LakeTable};

#[derive(Debug, Error, PartialEq)]
pub enum SemanticsError {
    #[error("type {0} is not in the KB")]
    UnknownType(TypeId),
    #[error("column has no KB-mapped values")]
    NoMappedValues,
}

/// Where an annotation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Kb,
    Synth,
}

/// Whether a column belongs to a data-lake table or to the query table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Context {
    DataLake,
    Query,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: String,
    pub source: Source,
    pub confidence: f64,
}

/// Annotation ids with their confidences, ordered by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnnotationSet(BTreeMap<String, f64>);

impl AnnotationSet {
    pub const fn new() -> Self {
        Self(BTreeMap::new())
    }

    pub fn insert(&mut self, id: impl Into<String>, confidence: f64) {
        debug_assert!((0.0..=1.0).contains(&confidence), "confidence {confidence} out of range");
        self.0.insert(id.into(), confidence);
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.0.get(id).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    /// Highest product of confidences over the shared ids. Ties keep the
    /// lexicographically smallest id; `None` when nothing is shared.
    pub fn best_shared(&self, other: &AnnotationSet) -> Option<(f64, &str)> {
        let mut best: Option<(f64, &str)> = None;
        for (id, a) in self.iter() {
            let Some(b) = other.get(id) else { continue };
            let product = a * b;
            if best.is_none_or(|(s, _)| product > s) {
                best = Some((product, id));
            }
        }
        best
    }
}

impl FromIterator<(String, f64)> for AnnotationSet {
    fn from_iter<I: IntoIterator<Item = (String, f64)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSemantics {
    pub table_id: String,
    pub column: usize,
    pub source: Source,
    pub context: Context,
    pub annotations: AnnotationSet,
    /// Unique values that mapped to at least one KB type.
    pub mapped_value_count: usize,
}

impl ColumnSemantics {
    pub fn annotations(&self) -> impl Iterator<Item = Annotation> + '_ {
        self.annotations.iter().map(|(id, c)| Annotation {
            id: id.to_string(),
            source: self.source,
            confidence: c,
        })
    }
}

/// Semantics of the ordered column pair `(left, right)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationshipSemantics {
    pub table_id: String,
    pub left: usize,
    pub right: usize,
    pub source: Source,
    pub annotations: AnnotationSet,
}

/// `1 / max(1, log10(count))`. Types with fewer than ten entities get 1.
pub fn granularity_from_count(count: u64) -> f64 {
    1.0 / (count.max(1) as f64).log10().max(1.0)
}

pub fn granularity_score(kb: &KbStore, ty: &TypeId) -> Result<f64, SemanticsError> {
    match kb.type_count(ty) {
        Some(c) if c >= 1 => Ok(granularity_from_count(c)),
        _ => Err(SemanticsError::UnknownType(ty.clone())),
    }
}

/// Fraction of the `mapped` unique values that carry `ty`.
pub fn frequency_score(tally: &BTreeMap<TypeId, usize>, ty: &TypeId, mapped: usize) -> Result<f64, SemanticsError> {
    if mapped == 0 {
        return Err(SemanticsError::NoMappedValues);
    }
    let hits = tally.get(ty).copied().unwrap_or(0);
    debug_assert!(hits <= mapped);
    Ok(hits as f64 / mapped as f64)
}

pub fn compute_column_semantics(kb: &KbStore, table_id: &str, col: &ColumnData, context: Context) -> ColumnSemantics {
    let mut tally: BTreeMap<TypeId, usize> = BTreeMap::new();
    let mut mapped = 0usize;
    for v in &col.unique_values {
        let types = kb.types_of_value(v);
        if types.is_empty() {
            continue;
        }
        mapped += 1;
        for t in types {
            *tally.entry(t).or_default() += 1;
        }
    }

    let mut annotations = AnnotationSet::new();
    if let Some(winner) = winning_top_level(kb, &tally) {
        for (t, _) in tally.iter().filter(|(t, _)| kb.top_level_of(t) == Some(&winner)) {
            let fs = frequency_score(&tally, t, mapped).expect("mapped > 0 when a winner exists");
            let conf = match context {
                Context::Query => fs,
                Context::DataLake => fs * granularity_score(kb, t).expect("tallied types are known"),
            };
            annotations.insert(t.as_str(), conf);
        }
    }

    ColumnSemantics {
        table_id: table_id.to_string(),
        column: col.column_index,
        source: Source::Kb,
        context,
        annotations,
        mapped_value_count: mapped,
    }
}

/// Majority vote over top-level types; ties go to the type with fewer KB
/// entities, then to the smaller id.
fn winning_top_level(kb: &KbStore, tally: &BTreeMap<TypeId, usize>) -> Option<TypeId> {
    kb.top_level_types()
        .iter()
        .filter_map(|t| tally.get(t).map(|&n| (t, n)))
        .min_by(|(a, na), (b, nb)| {
            nb.cmp(na)
                .then_with(|| kb.type_count(a).cmp(&kb.type_count(b)))
                .then_with(|| a.cmp(b))
        })
        .map(|(t, _)| t.clone())
}

/// KB relationship semantics of the ordered pair `(i, j)`: the most frequent
/// predicate over the mapped unique value pairs. Ties go to the predicate
/// with fewer KB pairs, then to the smaller id. Empty when no pair maps.
pub fn compute_relationship_semantics(kb: &KbStore, t: &LakeTable, i: usize, j: usize) -> RelationshipSemantics {
    let mut annotations = AnnotationSet::new();
    if let Ok(pairs) = t.unique_value_pairs(i, j) {
        let mut tally: BTreeMap<PredicateId, usize> = BTreeMap::new();
        let mut mapped_pairs = 0usize;
        for pair in &pairs {
            let preds: BTreeSet<PredicateId> = kb.predicates_of_pair(pair);
            if preds.is_empty() {
                continue;
            }
            mapped_pairs += 1;
            for p in preds {
                *tally.entry(p).or_default() += 1;
            }
        }
        let best = tally.iter().min_by(|(a, na), (b, nb)| {
            nb.cmp(na)
                .then_with(|| kb.predicate_count(a).cmp(&kb.predicate_count(b)))
                .then_with(|| a.cmp(b))
        });
        if let Some((p, &n)) = best {
            annotations.insert(p.as_str(), n as f64 / mapped_pairs as f64);
        }
    }
    RelationshipSemantics {
        table_id: t.table_id.clone(),
        left: i,
        right: j,
        source: Source::Kb,
        annotations,
    }
}
