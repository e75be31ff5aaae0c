//! Query phase: the query semantic tree, edge scoring and top-k ranking.
//!
//! Scoring is a chain over one query edge `(Q1, Q2)` and one table edge
//! `(T1, T2)`, evaluated once per semantics source:
//!
//! ```text
//! colMatch(Q1, T1)  = max_a conf(Q1, a) * conf(T1, a)
//! relMatch          = max_p conf(Q1Q2, p) * conf(T1T2, p)   (either table orientation)
//! pairMatch_source  = colMatch(Q1, T1) * relMatch * colMatch(Q2, T2)
//! ```
//!
//! The KB and synthesized results are then compared with the KB score's
//! granularity factors divided out; the winner's own score is kept. A table's
//! score is the sum of the pair matches of the query edges it matches.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::KbStore;
use crate::lake::LakeTable;
use crate::numfmt::format_sig12;
use crate::semantics::{compute_column_semantics, compute_relationship_semantics, AnnotationSet, Context, Source};
use crate::synth::SynthKb;

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("intent column {0} does not exist")]
    BadColumn(usize),
    #[error("intent column {0} is not textual")]
    IntentNotTextual(usize),
    #[error("intent column {0} maps to neither the KB nor the synthesized KB")]
    EmptyIntentSemantics(usize),
}

/// Which semantics sources take part in a search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Full,
    #[serde(rename = "kb")]
    KbOnly,
    #[serde(rename = "synth")]
    SynthOnly,
}

impl Mode {
    pub fn uses(self, source: Source) -> bool {
        match self {
            Mode::Full => true,
            Mode::KbOnly => source == Source::Kb,
            Mode::SynthOnly => source == Source::Synth,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Mode::Full),
            "kb" => Ok(Mode::KbOnly),
            "synth" => Ok(Mode::SynthOnly),
            other => Err(format!("unknown mode {other:?} (expected full, kb or synth)")),
        }
    }
}

/// KB and synthesized annotations of one column or column pair.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceSets {
    pub kb: AnnotationSet,
    pub synth: AnnotationSet,
}

pub static EMPTY_SETS: SourceSets = SourceSets {
    kb: AnnotationSet::new(),
    synth: AnnotationSet::new(),
};

impl SourceSets {
    pub fn get(&self, source: Source) -> &AnnotationSet {
        match source {
            Source::Kb => &self.kb,
            Source::Synth => &self.synth,
        }
    }

    pub fn get_mut(&mut self, source: Source) -> &mut AnnotationSet {
        match source {
            Source::Kb => &mut self.kb,
            Source::Synth => &mut self.synth,
        }
    }

    pub fn is_empty_for(&self, mode: Mode) -> bool {
        [Source::Kb, Source::Synth]
            .into_iter()
            .all(|s| !mode.uses(s) || self.get(s).is_empty())
    }
}

/// Semantic graph of one data-lake table: column semantics per column and
/// relationship semantics per ordered column pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableGraph {
    pub table_id: String,
    pub columns: BTreeMap<usize, SourceSets>,
    pub edges: BTreeMap<(usize, usize), SourceSets>,
}

impl TableGraph {
    pub fn new(table_id: impl Into<String>) -> Self {
        Self {
            table_id: table_id.into(),
            ..Self::default()
        }
    }

    pub fn column(&self, c: usize) -> &SourceSets {
        self.columns.get(&c).unwrap_or(&EMPTY_SETS)
    }

    pub fn edge(&self, i: usize, j: usize) -> &SourceSets {
        self.edges.get(&(i, j)).unwrap_or(&EMPTY_SETS)
    }

    fn column_ids(&self) -> BTreeSet<usize> {
        let mut ids: BTreeSet<usize> = self.columns.keys().copied().collect();
        for &(i, j) in self.edges.keys() {
            ids.insert(i);
            ids.insert(j);
        }
        ids
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryEdge {
    pub parent: usize,
    pub child: usize,
    /// Relationship semantics oriented parent -> child when available,
    /// otherwise child -> parent, chosen per source.
    pub relationship: SourceSets,
}

/// Query semantics plus the tree rooted at the intent column.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySemanticTree {
    pub root: usize,
    pub columns: BTreeMap<usize, SourceSets>,
    pub pairs: BTreeMap<(usize, usize), SourceSets>,
    /// Breadth-first from the root.
    pub edges: Vec<QueryEdge>,
    mode: Mode,
}

impl QuerySemanticTree {
    /// Tree over precomputed query semantics, edges derived breadth-first.
    pub fn from_parts(
        root: usize,
        columns: BTreeMap<usize, SourceSets>,
        pairs: BTreeMap<(usize, usize), SourceSets>,
    ) -> Self {
        let edges = bfs_edges(root, &columns, &pairs, Mode::Full);
        Self {
            root,
            columns,
            pairs,
            edges,
            mode: Mode::Full,
        }
    }

    pub fn column(&self, c: usize) -> &SourceSets {
        self.columns.get(&c).unwrap_or(&EMPTY_SETS)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// The same query semantics with edges re-derived from `mode`'s sources.
    pub fn for_mode(&self, mode: Mode) -> QuerySemanticTree {
        let edges = bfs_edges(self.root, &self.columns, &self.pairs, mode);
        QuerySemanticTree {
            edges,
            mode,
            ..self.clone()
        }
    }

    /// Drops the edge at `index` together with every edge below it.
    pub fn without_edge(&self, index: usize) -> QuerySemanticTree {
        let mut removed: BTreeSet<usize> = BTreeSet::new();
        let mut edges = Vec::new();
        for (n, e) in self.edges.iter().enumerate() {
            if n == index || removed.contains(&e.parent) {
                removed.insert(e.child);
            } else {
                edges.push(e.clone());
            }
        }
        QuerySemanticTree {
            edges,
            ..self.clone()
        }
    }
}

fn bfs_edges(
    root: usize,
    columns: &BTreeMap<usize, SourceSets>,
    pairs: &BTreeMap<(usize, usize), SourceSets>,
    mode: Mode,
) -> Vec<QueryEdge> {
    let mut visited: BTreeSet<usize> = BTreeSet::from([root]);
    let mut queue = VecDeque::from([root]);
    let mut edges = Vec::new();
    while let Some(u) = queue.pop_front() {
        for &v in columns.keys() {
            if visited.contains(&v) {
                continue;
            }
            let fwd = pairs.get(&(u, v)).unwrap_or(&EMPTY_SETS);
            let back = pairs.get(&(v, u)).unwrap_or(&EMPTY_SETS);
            let mut relationship = SourceSets::default();
            for s in [Source::Kb, Source::Synth] {
                if !mode.uses(s) {
                    continue;
                }
                let chosen = if fwd.get(s).is_empty() { back.get(s) } else { fwd.get(s) };
                *relationship.get_mut(s) = chosen.clone();
            }
            if relationship.is_empty_for(mode) {
                continue;
            }
            visited.insert(v);
            queue.push_back(v);
            edges.push(QueryEdge {
                parent: u,
                child: v,
                relationship,
            });
        }
    }
    edges
}

/// Synthesized semantics of a query column: for every synthesized type, the
/// mean of its per-value scores over the values found in the dictionary.
pub fn synth_column_semantics(synth: &SynthKb, values: &BTreeSet<String>) -> AnnotationSet {
    fold_scores(values.iter().filter_map(|v| synth.types_of_value(v)))
}

fn fold_scores<'a>(found: impl Iterator<Item = &'a crate::synth::SynthScores>) -> AnnotationSet {
    let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
    let mut n = 0usize;
    for scores in found {
        n += 1;
        for (id, x) in scores {
            *sums.entry(id.as_str()).or_default() += x;
        }
    }
    sums.into_iter()
        .map(|(id, s)| (id.to_string(), (s / n as f64).min(1.0)))
        .collect()
}

/// Annotates the query table and builds its semantic tree rooted at `intent`.
pub fn build_query_tree(
    q: &LakeTable,
    intent: usize,
    kb: Option<&KbStore>,
    synth: &SynthKb,
) -> Result<QuerySemanticTree, QueryError> {
    let intent_col = q.column(intent).ok_or(QueryError::BadColumn(intent))?;
    if !intent_col.is_textual() {
        return Err(QueryError::IntentNotTextual(intent));
    }

    let mut columns: BTreeMap<usize, SourceSets> = BTreeMap::new();
    for col in q.textual_columns() {
        let kb_cs = kb
            .map(|kb| compute_column_semantics(kb, &q.table_id, col, Context::Query).annotations)
            .unwrap_or_default();
        let synth_cs = synth_column_semantics(synth, &col.unique_values);
        columns.insert(
            col.column_index,
            SourceSets {
                kb: kb_cs,
                synth: synth_cs,
            },
        );
    }
    if columns[&intent].is_empty_for(Mode::Full) {
        return Err(QueryError::EmptyIntentSemantics(intent));
    }

    let mut pairs: BTreeMap<(usize, usize), SourceSets> = BTreeMap::new();
    for &i in columns.keys() {
        for &j in columns.keys() {
            if i == j {
                continue;
            }
            let mut sets = SourceSets::default();
            if let Some(kb) = kb {
                if !columns[&i].kb.is_empty() && !columns[&j].kb.is_empty() {
                    sets.kb = compute_relationship_semantics(kb, q, i, j).annotations;
                }
            }
            if let Ok(vp) = q.unique_value_pairs(i, j) {
                sets.synth = fold_scores(vp.iter().filter_map(|p| synth.predicates_of_pair(p)));
            }
            if !sets.is_empty_for(Mode::Full) {
                pairs.insert((i, j), sets);
            }
        }
    }

    Ok(QuerySemanticTree::from_parts(intent, columns, pairs))
}

/// The semantics around one edge as seen by the scorer.
#[derive(Debug, Clone, Copy)]
pub struct EdgeSemantics<'a> {
    pub left: &'a SourceSets,
    pub right: &'a SourceSets,
    pub forward: &'a SourceSets,
    /// Right-to-left semantics; unused on the query side.
    pub backward: &'a SourceSets,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColMatch {
    pub score: f64,
    pub annotation: Option<String>,
}

pub fn col_match(query: &AnnotationSet, table: &AnnotationSet) -> ColMatch {
    match query.best_shared(table) {
        Some((score, id)) => ColMatch {
            score,
            annotation: Some(id.to_string()),
        },
        None => ColMatch::default(),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelMatch {
    pub score: f64,
    pub annotation: Option<String>,
    /// The table pair matched in its right-to-left orientation.
    pub reversed: bool,
}

/// Best shared relationship, trying the table pair in both orientations.
/// The forward orientation wins ties.
pub fn rel_match(query: &AnnotationSet, forward: &AnnotationSet, backward: &AnnotationSet) -> RelMatch {
    let f = query.best_shared(forward);
    let b = query.best_shared(backward);
    match (f, b) {
        (f, Some((bs, bid))) if f.is_none_or(|(fs, _)| bs > fs) => RelMatch {
            score: bs,
            annotation: Some(bid.to_string()),
            reversed: true,
        },
        (Some((fs, fid)), _) => RelMatch {
            score: fs,
            annotation: Some(fid.to_string()),
            reversed: false,
        },
        _ => RelMatch::default(),
    }
}

/// One source's pair match with the annotations that produced it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SourceMatch {
    pub score: f64,
    pub left: Option<String>,
    pub relationship: Option<String>,
    pub right: Option<String>,
    pub reversed: bool,
}

pub fn pair_match_source(q: &EdgeSemantics<'_>, t: &EdgeSemantics<'_>, source: Source) -> SourceMatch {
    let left = col_match(q.left.get(source), t.left.get(source));
    if left.score == 0.0 {
        return SourceMatch::default();
    }
    let rel = rel_match(q.forward.get(source), t.forward.get(source), t.backward.get(source));
    if rel.score == 0.0 {
        return SourceMatch::default();
    }
    let right = col_match(q.right.get(source), t.right.get(source));
    if right.score == 0.0 {
        return SourceMatch::default();
    }
    SourceMatch {
        score: left.score * rel.score * right.score,
        left: left.annotation,
        relationship: rel.annotation,
        right: right.annotation,
        reversed: rel.reversed,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairMatch {
    pub score: f64,
    /// The selected source; `None` when neither side matched.
    pub source: Option<Source>,
    pub kb: SourceMatch,
    pub synth: SourceMatch,
}

impl PairMatch {
    pub fn selected(&self) -> Option<&SourceMatch> {
        match self.source? {
            Source::Kb => Some(&self.kb),
            Source::Synth => Some(&self.synth),
        }
    }
}

/// Scores a query edge against a table edge under `mode`. In full mode the
/// KB match, with its two column granularity scores divided out, is compared
/// against the synthesized match; the KB side wins ties and keeps its
/// granularity-weighted score when selected.
pub fn pair_match(q: &EdgeSemantics<'_>, t: &EdgeSemantics<'_>, gs: &dyn Fn(&str) -> f64, mode: Mode) -> PairMatch {
    let kb = if mode.uses(Source::Kb) {
        pair_match_source(q, t, Source::Kb)
    } else {
        SourceMatch::default()
    };
    let synth = if mode.uses(Source::Synth) {
        pair_match_source(q, t, Source::Synth)
    } else {
        SourceMatch::default()
    };
    let source = if kb.score > 0.0 {
        let a1 = kb.left.as_deref().expect("matched KB side has a left annotation");
        let a2 = kb.right.as_deref().expect("matched KB side has a right annotation");
        let without_granularity = kb.score / (gs(a1) * gs(a2));
        if without_granularity >= synth.score {
            Some(Source::Kb)
        } else {
            Some(Source::Synth)
        }
    } else if synth.score > 0.0 {
        Some(Source::Synth)
    } else {
        None
    };
    let score = match source {
        Some(Source::Kb) => kb.score,
        Some(Source::Synth) => synth.score,
        None => 0.0,
    };
    PairMatch {
        score,
        source,
        kb,
        synth,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedEdge {
    pub query_parent: usize,
    pub query_child: usize,
    pub table_parent: usize,
    pub table_child: usize,
    pub source: Source,
    pub left_annotation: String,
    pub relationship: String,
    pub right_annotation: String,
    pub reversed: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedResult {
    pub table_id: String,
    pub score: f64,
    pub root_column: usize,
    pub matched_edges: Vec<MatchedEdge>,
}

/// Best rooted match of the query tree into one table graph, or `None` when
/// no query edge matches.
///
/// Every table column whose semantics share an annotation with the intent
/// column is tried as the root. Query edges are then visited top-down; each
/// takes the unused table column that maximizes its pair match, so a table
/// column plays at most one role.
pub fn score_table(
    tree: &QuerySemanticTree,
    g: &TableGraph,
    gs: &dyn Fn(&str) -> f64,
    mode: Mode,
) -> Option<RankedResult> {
    let intent = tree.column(tree.root);
    let ids = g.column_ids();
    let mut best: Option<RankedResult> = None;
    for &root in &ids {
        let cs = g.column(root);
        let anchored = [Source::Kb, Source::Synth]
            .into_iter()
            .any(|s| mode.uses(s) && intent.get(s).best_shared(cs.get(s)).is_some_and(|(x, _)| x > 0.0));
        if !anchored {
            continue;
        }

        let mut mapping: BTreeMap<usize, usize> = BTreeMap::from([(tree.root, root)]);
        let mut used: BTreeSet<usize> = BTreeSet::from([root]);
        let mut matched = Vec::new();
        let mut score = 0.0;
        for e in &tree.edges {
            let Some(&tp) = mapping.get(&e.parent) else {
                continue;
            };
            let qe = EdgeSemantics {
                left: tree.column(e.parent),
                right: tree.column(e.child),
                forward: &e.relationship,
                backward: &EMPTY_SETS,
            };
            let mut pick: Option<(usize, PairMatch)> = None;
            for &w in ids.iter().filter(|w| !used.contains(w)) {
                let te = EdgeSemantics {
                    left: g.column(tp),
                    right: g.column(w),
                    forward: g.edge(tp, w),
                    backward: g.edge(w, tp),
                };
                let pm = pair_match(&qe, &te, gs, mode);
                if pm.score > 0.0 && pick.as_ref().is_none_or(|(_, p)| pm.score > p.score) {
                    pick = Some((w, pm));
                }
            }
            if let Some((w, pm)) = pick {
                let sel = pm.selected().expect("positive score has a source");
                matched.push(MatchedEdge {
                    query_parent: e.parent,
                    query_child: e.child,
                    table_parent: tp,
                    table_child: w,
                    source: pm.source.expect("positive score has a source"),
                    left_annotation: sel.left.clone().unwrap_or_default(),
                    relationship: sel.relationship.clone().unwrap_or_default(),
                    right_annotation: sel.right.clone().unwrap_or_default(),
                    reversed: sel.reversed,
                    score: pm.score,
                });
                score += pm.score;
                mapping.insert(e.child, w);
                used.insert(w);
            }
        }
        if matched.is_empty() {
            continue;
        }
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(RankedResult {
                table_id: g.table_id.clone(),
                score,
                root_column: root,
                matched_edges: matched,
            });
        }
    }
    best
}

/// Orders by score descending, then table id, and keeps the first `k`.
pub fn rank(mut results: Vec<RankedResult>, k: usize) -> Vec<RankedResult> {
    results.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.table_id.cmp(&b.table_id)));
    results.truncate(k);
    results
}

/// Top-k tables of `idx` for `tree` under `mode`.
pub fn search_top_k(idx: &crate::index::SearchIndex, tree: &QuerySemanticTree, k: usize, mode: Mode) -> Vec<RankedResult> {
    let tree = tree.for_mode(mode);
    let gs = |a: &str| idx.granularity(a);
    let results = idx
        .candidate_graphs(&tree)
        .iter()
        .filter_map(|g| score_table(&tree, g, &gs, mode))
        .collect();
    rank(results, k)
}

/// Tab-separated ranking: header plus one line per result.
pub fn results_tsv(results: &[RankedResult]) -> String {
    let mut out = String::from("rank\ttable_id\tscore\troot_column\tmatched_edge_count\n");
    for (n, r) in results.iter().enumerate() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            n + 1,
            r.table_id,
            format_sig12(r.score),
            r.root_column,
            r.matched_edges.len()
        );
    }
    out
}
