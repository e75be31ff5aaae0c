//! Exact unary functional dependencies between textual columns.
//!
//! Every ordered pair of textual columns is a candidate `i -> j`; the
//! candidate survives when no two rows share a value in `i` but differ in
//! `j`. Rows with an empty cell on either side are ignored for that pair.
//! The check partitions rows by the determinant value, so each candidate
//! costs one pass over the rows.

use std::collections::hash_map::Entry;
use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::lake::LakeTable;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnaryFd {
    pub table_id: String,
    pub determinant: usize,
    pub dependent: usize,
}

pub fn discover_unary_fds(t: &LakeTable) -> BTreeSet<UnaryFd> {
    let textual: Vec<usize> = t.textual_columns().map(|c| c.column_index).collect();
    let mut out = BTreeSet::new();
    for &i in &textual {
        for &j in &textual {
            if i != j && holds(t, i, j) {
                out.insert(UnaryFd {
                    table_id: t.table_id.clone(),
                    determinant: i,
                    dependent: j,
                });
            }
        }
    }
    out
}

fn holds(t: &LakeTable, i: usize, j: usize) -> bool {
    let mut seen: HashMap<&str, &str> = HashMap::new();
    for row in t.rows() {
        let (l, r) = (row[i].as_str(), row[j].as_str());
        if l.is_empty() || r.is_empty() {
            continue;
        }
        match seen.entry(l) {
            Entry::Vacant(e) => {
                e.insert(r);
            }
            Entry::Occupied(e) if *e.get() != r => return false,
            Entry::Occupied(_) => {}
        }
    }
    true
}
