#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;

use unionsearch::fd::UnaryFd;
use unionsearch::kb::{KbBuilder, KbStore};
use unionsearch::lake::LakeTable;
use unionsearch::query::{pair_match, EdgeSemantics, Mode, QuerySemanticTree, SourceSets, TableGraph};
use unionsearch::semantics::{compute_column_semantics, compute_relationship_semantics, granularity_score, Context};
use unionsearch::synth::{LookupDictionary, SynthId};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

/// Row-pair check: `i -> j` fails iff two rows agree on a non-empty `i` and
/// disagree on `j`, both non-empty.
pub fn quadratic_fds(t: &LakeTable) -> BTreeSet<UnaryFd> {
    let textual: Vec<usize> = t.textual_columns().map(|c| c.column_index).collect();
    let rows: Vec<&[String]> = t.rows().collect();
    let mut out = BTreeSet::new();
    for &i in &textual {
        'pair: for &j in &textual {
            if i == j {
                continue;
            }
            for a in 0..rows.len() {
                for b in (a + 1)..rows.len() {
                    let (ra, rb) = (rows[a], rows[b]);
                    if ra[i].is_empty() || ra[j].is_empty() || rb[i].is_empty() || rb[j].is_empty() {
                        continue;
                    }
                    if ra[i] == rb[i] && ra[j] != rb[j] {
                        continue 'pair;
                    }
                }
            }
            out.insert(UnaryFd {
                table_id: t.table_id.clone(),
                determinant: i,
                dependent: j,
            });
        }
    }
    out
}

/// Full semantic graph of `t` computed straight from the KB and the lookup
/// dictionary, without the index.
pub fn scan_graph(t: &LakeTable, kb: Option<&KbStore>, dict: Option<&LookupDictionary>) -> TableGraph {
    let mut g = TableGraph::new(&t.table_id);
    for col in t.textual_columns() {
        let mut s = SourceSets::default();
        if let Some(kb) = kb {
            s.kb = compute_column_semantics(kb, &t.table_id, col, Context::DataLake).annotations;
        }
        if let Some(d) = dict {
            s.synth = d.column_confidences(&SynthId::column(&t.table_id, col.column_index));
        }
        g.columns.insert(col.column_index, s);
    }
    let cols: Vec<usize> = g.columns.keys().copied().collect();
    for &i in &cols {
        for &j in &cols {
            if i == j {
                continue;
            }
            let mut s = SourceSets::default();
            if let Some(kb) = kb {
                if !g.columns[&i].kb.is_empty() && !g.columns[&j].kb.is_empty() {
                    s.kb = compute_relationship_semantics(kb, t, i, j).annotations;
                }
            }
            if let Some(d) = dict {
                s.synth = d.pair_confidences(&SynthId::pair(&t.table_id, i, j));
            }
            g.edges.insert((i, j), s);
        }
    }
    g
}

/// Exhaustive-root greedy scorer over a full graph.
pub fn brute_score(tree: &QuerySemanticTree, g: &TableGraph, kb: Option<&KbStore>, mode: Mode) -> Option<(f64, usize)> {
    let gs = |a: &str| {
        kb.and_then(|kb| granularity_score(kb, &unionsearch::kb::TypeId::new(a)).ok())
            .unwrap_or(1.0)
    };
    let intent = &tree.columns[&tree.root];
    let mut best: Option<(f64, usize)> = None;
    let cols: Vec<usize> = g.columns.keys().copied().collect();
    for &root in &cols {
        let c = &g.columns[&root];
        let mut anchor = 0.0f64;
        if mode.uses(unionsearch::semantics::Source::Kb) {
            for (a, x) in intent.kb.iter() {
                if let Some(y) = c.kb.get(a) {
                    anchor = anchor.max(x * y);
                }
            }
        }
        if mode.uses(unionsearch::semantics::Source::Synth) {
            for (a, x) in intent.synth.iter() {
                if let Some(y) = c.synth.get(a) {
                    anchor = anchor.max(x * y);
                }
            }
        }
        if anchor <= 0.0 {
            continue;
        }
        let mut map = BTreeMap::from([(tree.root, root)]);
        let mut used = BTreeSet::from([root]);
        let mut total = 0.0;
        let mut matched = 0;
        for e in &tree.edges {
            let Some(&tp) = map.get(&e.parent) else { continue };
            let empty = SourceSets::default();
            let q = EdgeSemantics {
                left: &tree.columns[&e.parent],
                right: &tree.columns[&e.child],
                forward: &e.relationship,
                backward: &empty,
            };
            let mut pick: Option<(usize, f64)> = None;
            for &w in &cols {
                if used.contains(&w) {
                    continue;
                }
                let t = EdgeSemantics {
                    left: &g.columns[&tp],
                    right: &g.columns[&w],
                    forward: &g.edges[&(tp, w)],
                    backward: &g.edges[&(w, tp)],
                };
                let s = pair_match(&q, &t, &gs, mode).score;
                if s > 0.0 && pick.is_none_or(|(_, b)| s > b) {
                    pick = Some((w, s));
                }
            }
            if let Some((w, s)) = pick {
                total += s;
                matched += 1;
                map.insert(e.child, w);
                used.insert(w);
            }
        }
        if matched > 0 && best.is_none_or(|(b, _)| total > b) {
            best = Some((total, root));
        }
    }
    best
}

/// Every lake table scored by [`brute_score`], ranked and cut to `k`.
pub fn brute_top_k(
    lake: &[LakeTable],
    kb: Option<&KbStore>,
    dict: Option<&LookupDictionary>,
    tree: &QuerySemanticTree,
    k: usize,
    mode: Mode,
) -> Vec<(String, f64, usize)> {
    let tree = tree.for_mode(mode);
    let mut out: Vec<(String, f64, usize)> = lake
        .iter()
        .filter_map(|t| {
            let g = scan_graph(t, kb, dict);
            brute_score(&tree, &g, kb, mode).map(|(s, r)| (t.table_id.clone(), s, r))
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out.truncate(k);
    out
}

const WORDS: &[&str] = &[
    "alder", "birch", "cedar", "dogwood", "elm", "fir", "ginkgo", "hazel", "ivy", "juniper", "kauri", "larch", "maple",
    "nutmeg", "oak", "pine", "quince", "rowan", "spruce", "teak", "umbrella", "vine", "willow", "yew", "zelkova",
    "aspen", "beech", "cherry", "damson", "ebony",
];

/// Random KB over the shared vocabulary: two or three top-level types with
/// subtypes, most words labelled, a handful of facts over three predicates.
pub fn random_kb(rng: &mut StdRng) -> KbStore {
    let mut b = KbBuilder::new();
    let mut leaves = Vec::new();
    for top in 0..rng.gen_range(2..=3) {
        let t = format!("top{top}");
        b.subtype(&t, "thing");
        leaves.push(t.clone());
        for sub in 0..rng.gen_range(1..=3) {
            let s = format!("{t}_sub{sub}");
            b.subtype(&s, &t);
            leaves.push(s);
        }
    }
    let mut entities = Vec::new();
    for w in WORDS {
        if rng.gen_bool(0.7) {
            let e = format!("e_{w}");
            b.label(w, &e);
            b.entity_type(&e, leaves.choose(rng).unwrap());
            if rng.gen_bool(0.2) {
                let e2 = format!("e2_{w}");
                b.label(w, &e2);
                b.entity_type(&e2, leaves.choose(rng).unwrap());
                entities.push(e2);
            }
            entities.push(e);
        }
    }
    for _ in 0..rng.gen_range(0..=40) {
        let (Some(s), Some(o)) = (entities.choose(rng), entities.choose(rng)) else { break };
        let p = ["rel_a", "rel_b", "rel_c"].choose(rng).unwrap();
        b.fact(s, p, o);
    }
    for t in &leaves {
        if rng.gen_bool(0.5) {
            b.type_count(t, rng.gen_range(1..2_000_000));
        }
    }
    b.build().expect("generated KB is well formed")
}

/// A table with up to `max_cols` columns and `max_rows` rows. Most columns
/// draw from a narrow slice of the vocabulary so columns overlap across
/// tables; some are numeric.
pub fn random_table(rng: &mut StdRng, id: &str, max_cols: usize, max_rows: usize) -> LakeTable {
    let ncols = rng.gen_range(1..=max_cols);
    let nrows = rng.gen_range(1..=max_rows);
    let headers: Vec<String> = (0..ncols).map(|c| format!("c{c}")).collect();
    let mut cols: Vec<Vec<String>> = Vec::new();
    for c in 0..ncols {
        let numeric = c > 0 && rng.gen_bool(0.15);
        let lo = rng.gen_range(0..WORDS.len() - 4);
        let hi = (lo + rng.gen_range(3..10)).min(WORDS.len());
        let key_like = rng.gen_bool(0.3);
        let col: Vec<String> = (0..nrows)
            .map(|r| {
                if numeric {
                    rng.gen_range(0..100).to_string()
                } else if rng.gen_bool(0.03) {
                    String::new()
                } else if key_like && c > 0 {
                    // derived from column 0 so unary FDs occur
                    let base = &cols[0][r];
                    let h = base.bytes().map(usize::from).sum::<usize>();
                    WORDS[lo + h % (hi - lo)].to_string()
                } else {
                    WORDS[rng.gen_range(lo..hi)].to_string()
                }
            })
            .collect();
        cols.push(col);
    }
    let rows: Vec<Vec<String>> = (0..nrows).map(|r| cols.iter().map(|c| c[r].clone()).collect()).collect();
    LakeTable::from_rows(id, &headers, &rows).expect("generated table is rectangular")
}
