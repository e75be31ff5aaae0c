//! Offline indexing of a data lake.
//!
//! Every table is annotated once: KB column semantics for each textual
//! column, KB relationship semantics for each ordered pair of annotated
//! columns, unary FDs, and from those the synthesized KB. The results go into
//! two inverted indexes. The node index maps an annotation to the columns
//! carrying it; the edge index maps a relationship (for the KB, together with
//! the types at both ends) to the column pairs carrying it.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fd::{discover_unary_fds, UnaryFd};
use crate::kb::{load_kb, KbError, KbStore, TypeId};
use crate::lake::{ingest_lake, LakeError, LakeTable};
use crate::query::{Mode, QuerySemanticTree, TableGraph};
use crate::semantics::{
    compute_column_semantics, compute_relationship_semantics, granularity_score, AnnotationSet, Context, Source,
};
use crate::synth::{LookupDictionary, SynthId, SynthKb};

pub const FORMAT_VERSION: u32 = 1;

pub const NODE_INDEX_FILE: &str = "node_index.json";
pub const EDGE_INDEX_FILE: &str = "edge_index.json";
pub const SYNTH_TYPE_FILE: &str = "synth_type_dict.json";
pub const SYNTH_REL_FILE: &str = "synth_rel_dict.json";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("index format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("malformed index file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Lake(#[from] LakeError),
    #[error(transparent)]
    Kb(#[from] KbError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub use_kb: bool,
    pub use_synth: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            use_kb: true,
            use_synth: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeKey {
    pub source: Source,
    pub annotation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePosting {
    pub table_id: String,
    pub column: usize,
    pub confidence: f64,
}

/// `left` and `right` are the end types for KB keys and absent for
/// synthesized keys.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeKey {
    pub source: Source,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub left: Option<String>,
    pub relationship: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub right: Option<String>,
}

impl EdgeKey {
    pub fn kb(left: &str, relationship: &str, right: &str) -> Self {
        Self {
            source: Source::Kb,
            left: Some(left.to_string()),
            relationship: relationship.to_string(),
            right: Some(right.to_string()),
        }
    }

    pub fn synth(relationship: &str) -> Self {
        Self {
            source: Source::Synth,
            left: None,
            relationship: relationship.to_string(),
            right: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgePosting {
    pub table_id: String,
    pub left: usize,
    pub right: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub left_conf: Option<f64>,
    pub rel_conf: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub right_conf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableManifest {
    pub table_id: String,
    pub rows: usize,
    pub columns: usize,
    pub textual_columns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub format_version: u32,
    /// KB directory as given at build time; queries reload the KB from here.
    pub kb_dir: Option<String>,
    pub options: BuildOptions,
    pub tables: Vec<TableManifest>,
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchIndex {
    pub node_index: BTreeMap<NodeKey, Vec<NodePosting>>,
    pub edge_index: BTreeMap<EdgeKey, Vec<EdgePosting>>,
    /// Granularity score of every KB type appearing in the node index.
    pub granularity: BTreeMap<String, f64>,
    pub synth: SynthKb,
    pub meta: IndexMeta,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub column_semantics: Duration,
    pub relationship_semantics: Duration,
    pub fds: Duration,
    pub synth: Duration,
    pub postings: Duration,
}

/// Ingests `lake_dir`, loads the KB from `kb_dir` when KB semantics are
/// enabled, and indexes everything.
pub fn build_index(lake_dir: &Path, kb_dir: Option<&Path>, options: BuildOptions) -> Result<SearchIndex, IndexError> {
    build_index_timed(lake_dir, kb_dir, options).map(|(idx, _)| idx)
}

pub fn build_index_timed(
    lake_dir: &Path,
    kb_dir: Option<&Path>,
    options: BuildOptions,
) -> Result<(SearchIndex, StageTimings), IndexError> {
    let kb = match kb_dir {
        Some(dir) if options.use_kb => Some(load_kb(dir)?),
        _ => None,
    };
    let lake = ingest_lake(lake_dir)?;
    let (mut idx, timings) = build_index_from_tables(&lake.tables, kb.as_ref(), options);
    idx.meta.kb_dir = kb_dir.map(|p| p.to_string_lossy().into_owned());
    idx.meta.skipped = lake
        .skipped
        .iter()
        .map(|(p, _)| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    Ok((idx, timings))
}

pub fn build_index_from_tables(
    tables: &[LakeTable],
    kb: Option<&KbStore>,
    options: BuildOptions,
) -> (SearchIndex, StageTimings) {
    let kb = kb.filter(|_| options.use_kb);
    let mut timings = StageTimings::default();

    let clock = Instant::now();
    let kb_cs: Vec<BTreeMap<usize, AnnotationSet>> = tables
        .par_iter()
        .map(|t| match kb {
            Some(kb) => t
                .textual_columns()
                .map(|c| (c.column_index, compute_column_semantics(kb, &t.table_id, c, Context::DataLake).annotations))
                .filter(|(_, a)| !a.is_empty())
                .collect(),
            None => BTreeMap::new(),
        })
        .collect();
    timings.column_semantics = clock.elapsed();

    let clock = Instant::now();
    let kb_rs: Vec<BTreeMap<(usize, usize), AnnotationSet>> = tables
        .par_iter()
        .zip(&kb_cs)
        .map(|(t, cs)| {
            let mut out = BTreeMap::new();
            if let Some(kb) = kb {
                for &i in cs.keys() {
                    for &j in cs.keys() {
                        if i != j {
                            let rs = compute_relationship_semantics(kb, t, i, j).annotations;
                            if !rs.is_empty() {
                                out.insert((i, j), rs);
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();
    timings.relationship_semantics = clock.elapsed();

    let clock = Instant::now();
    let fds: BTreeMap<String, BTreeSet<UnaryFd>> = if options.use_synth {
        tables
            .par_iter()
            .map(|t| (t.table_id.clone(), discover_unary_fds(t)))
            .collect()
    } else {
        BTreeMap::new()
    };
    timings.fds = clock.elapsed();

    let clock = Instant::now();
    let dict = options.use_synth.then(|| LookupDictionary::build(tables, kb, &fds));
    let synth = dict.as_ref().map(LookupDictionary::score).unwrap_or_default();
    timings.synth = clock.elapsed();

    let clock = Instant::now();
    let mut node_index: BTreeMap<NodeKey, Vec<NodePosting>> = BTreeMap::new();
    let mut edge_index: BTreeMap<EdgeKey, Vec<EdgePosting>> = BTreeMap::new();
    let mut granularity = BTreeMap::new();
    for (n, t) in tables.iter().enumerate() {
        for (&c, set) in &kb_cs[n] {
            for (a, conf) in set.iter() {
                node_index
                    .entry(NodeKey {
                        source: Source::Kb,
                        annotation: a.to_string(),
                    })
                    .or_default()
                    .push(NodePosting {
                        table_id: t.table_id.clone(),
                        column: c,
                        confidence: conf,
                    });
                if let Some(kb) = kb {
                    granularity
                        .entry(a.to_string())
                        .or_insert_with(|| granularity_score(kb, &TypeId::new(a)).expect("annotated types are known"));
                }
            }
        }
        for (&(i, j), rs) in &kb_rs[n] {
            for (a, ca) in kb_cs[n][&i].iter() {
                for (p, cp) in rs.iter() {
                    for (b, cb) in kb_cs[n][&j].iter() {
                        edge_index.entry(EdgeKey::kb(a, p, b)).or_default().push(EdgePosting {
                            table_id: t.table_id.clone(),
                            left: i,
                            right: j,
                            left_conf: Some(ca),
                            rel_conf: cp,
                            right_conf: Some(cb),
                        });
                    }
                }
            }
        }
        let Some(d) = &dict else { continue };
        for col in t.textual_columns() {
            let cs = d.column_confidences(&SynthId::column(&t.table_id, col.column_index));
            for (a, conf) in cs.iter() {
                node_index
                    .entry(NodeKey {
                        source: Source::Synth,
                        annotation: a.to_string(),
                    })
                    .or_default()
                    .push(NodePosting {
                        table_id: t.table_id.clone(),
                        column: col.column_index,
                        confidence: conf,
                    });
            }
        }
        for fd in fds.get(&t.table_id).into_iter().flatten() {
            let rs = d.pair_confidences(&SynthId::pair(&t.table_id, fd.determinant, fd.dependent));
            for (p, conf) in rs.iter() {
                edge_index.entry(EdgeKey::synth(p)).or_default().push(EdgePosting {
                    table_id: t.table_id.clone(),
                    left: fd.determinant,
                    right: fd.dependent,
                    left_conf: None,
                    rel_conf: conf,
                    right_conf: None,
                });
            }
        }
    }
    for postings in node_index.values_mut() {
        postings.sort_by(|a, b| (&a.table_id, a.column).cmp(&(&b.table_id, b.column)));
    }
    for postings in edge_index.values_mut() {
        postings.sort_by(|a, b| (&a.table_id, a.left, a.right).cmp(&(&b.table_id, b.left, b.right)));
    }
    timings.postings = clock.elapsed();

    let meta = IndexMeta {
        format_version: FORMAT_VERSION,
        kb_dir: None,
        options,
        tables: tables
            .iter()
            .map(|t| TableManifest {
                table_id: t.table_id.clone(),
                rows: t.row_count,
                columns: t.columns.len(),
                textual_columns: t.textual_columns().count(),
            })
            .collect(),
        skipped: Vec::new(),
    };
    let idx = SearchIndex {
        node_index,
        edge_index,
        granularity,
        synth,
        meta,
    };
    (idx, timings)
}

impl SearchIndex {
    pub fn is_empty(&self) -> bool {
        self.node_index.is_empty() && self.edge_index.is_empty()
    }

    /// Granularity score of a KB type; 1 for types the index never saw.
    pub fn granularity(&self, annotation: &str) -> f64 {
        self.granularity.get(annotation).copied().unwrap_or(1.0)
    }

    /// Table graphs of every table hit by some query edge, holding only the
    /// annotations the query can match.
    pub fn candidate_graphs<'a>(&'a self, tree: &QuerySemanticTree) -> Vec<TableGraph> {
        let mode = tree.mode();
        let mut graphs: BTreeMap<&str, TableGraph> = BTreeMap::new();
        let record = |key: &EdgeKey, graphs: &mut BTreeMap<&'a str, TableGraph>| {
            for p in self.edge_index.get(key).into_iter().flatten() {
                graphs
                    .entry(&p.table_id)
                    .or_insert_with(|| TableGraph::new(&p.table_id))
                    .edges
                    .entry((p.left, p.right))
                    .or_default()
                    .get_mut(key.source)
                    .insert(key.relationship.as_str(), p.rel_conf);
            }
        };
        for e in &tree.edges {
            if mode.uses(Source::Kb) {
                for a in tree.column(e.parent).kb.ids() {
                    for p in e.relationship.kb.ids() {
                        for b in tree.column(e.child).kb.ids() {
                            record(&EdgeKey::kb(a, p, b), &mut graphs);
                            record(&EdgeKey::kb(b, p, a), &mut graphs);
                        }
                    }
                }
            }
            if mode.uses(Source::Synth) {
                for p in e.relationship.synth.ids() {
                    record(&EdgeKey::synth(p), &mut graphs);
                }
            }
        }

        for sets in tree.columns.values() {
            for source in [Source::Kb, Source::Synth] {
                if !mode.uses(source) {
                    continue;
                }
                for a in sets.get(source).ids() {
                    let key = NodeKey {
                        source,
                        annotation: a.to_string(),
                    };
                    for p in self.node_index.get(&key).into_iter().flatten() {
                        if let Some(g) = graphs.get_mut(p.table_id.as_str()) {
                            g.columns.entry(p.column).or_default().get_mut(source).insert(a, p.confidence);
                        }
                    }
                }
            }
        }
        graphs.into_values().collect()
    }
}

#[derive(Serialize, Deserialize)]
struct NodeFile {
    granularity: BTreeMap<String, f64>,
    entries: Vec<NodeEntry>,
}

#[derive(Serialize, Deserialize)]
struct NodeEntry {
    #[serde(flatten)]
    key: NodeKey,
    postings: Vec<NodePosting>,
}

#[derive(Serialize, Deserialize)]
struct EdgeEntry {
    #[serde(flatten)]
    key: EdgeKey,
    postings: Vec<EdgePosting>,
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("index structures serialize") + "\n"
}

/// Writes the five index files into `dir`, creating it when missing.
pub fn save_index(idx: &SearchIndex, dir: &Path) -> Result<(), IndexError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| IndexError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let node = NodeFile {
        granularity: idx.granularity.clone(),
        entries: idx
            .node_index
            .iter()
            .map(|(k, v)| NodeEntry {
                key: k.clone(),
                postings: v.clone(),
            })
            .collect(),
    };
    let edges: Vec<EdgeEntry> = idx
        .edge_index
        .iter()
        .map(|(k, v)| EdgeEntry {
            key: k.clone(),
            postings: v.clone(),
        })
        .collect();
    let files = [
        (NODE_INDEX_FILE, to_json(&node)),
        (EDGE_INDEX_FILE, to_json(&edges)),
        (SYNTH_TYPE_FILE, idx.synth.type_dict_json()),
        (SYNTH_REL_FILE, idx.synth.rel_dict_json()),
        (META_FILE, to_json(&idx.meta)),
    ];
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(io(&path))?;
    }
    Ok(())
}

pub fn load_index(dir: &Path) -> Result<SearchIndex, IndexError> {
    let read = |name: &str| {
        let path = dir.join(name);
        std::fs::read_to_string(&path)
            .map(|s| (path.clone(), s))
            .map_err(|source| IndexError::Io { path, source })
    };
    let format = |path: &Path, reason: String| IndexError::Format {
        path: path.to_path_buf(),
        reason,
    };

    let (path, text) = read(META_FILE)?;
    let version: serde_json::Value = serde_json::from_str(&text).map_err(|e| format(&path, e.to_string()))?;
    let found = version
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| format(&path, "missing format_version".into()))?;
    if found != u64::from(FORMAT_VERSION) {
        return Err(IndexError::Version {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected: FORMAT_VERSION,
        });
    }
    let meta: IndexMeta = serde_json::from_str(&text).map_err(|e| format(&path, e.to_string()))?;

    let (path, text) = read(NODE_INDEX_FILE)?;
    let node: NodeFile = serde_json::from_str(&text).map_err(|e| format(&path, e.to_string()))?;
    let (path, text) = read(EDGE_INDEX_FILE)?;
    let edges: Vec<EdgeEntry> = serde_json::from_str(&text).map_err(|e| format(&path, e.to_string()))?;
    let (type_path, type_json) = read(SYNTH_TYPE_FILE)?;
    let (_, rel_json) = read(SYNTH_REL_FILE)?;
    let synth = SynthKb::from_json(&type_json, &rel_json).map_err(|e| format(&type_path, e))?;

    Ok(SearchIndex {
        node_index: node.entries.into_iter().map(|e| (e.key, e.postings)).collect(),
        edge_index: edges.into_iter().map(|e| (e.key, e.postings)).collect(),
        granularity: node.granularity,
        synth,
        meta,
    })
}

pub fn mode_for(options: BuildOptions) -> Mode {
    match (options.use_kb, options.use_synth) {
        (true, false) => Mode::KbOnly,
        (false, true) => Mode::SynthOnly,
        _ => Mode::Full,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lake() -> Vec<LakeTable> {
        vec![
            LakeTable::from_rows("a", &["x", "y"], &[vec!["p", "q"], vec!["r", "s"]]).unwrap(),
            LakeTable::from_rows("b", &["x", "y"], &[vec!["p", "q"], vec!["t", "u"]]).unwrap(),
        ]
    }

    #[test]
    fn synth_only_postings() {
        let (idx, _) = build_index_from_tables(&lake(), None, BuildOptions::default());
        let key = EdgeKey::synth(SynthId::pair("a", 0, 1).as_str());
        let postings = &idx.edge_index[&key];
        assert_eq!(postings.len(), 2);
        assert_eq!(postings[0].table_id, "a");
        assert_eq!(postings[1].table_id, "b");
        assert_eq!(postings[1].rel_conf, 0.5);
        assert!(idx.granularity.is_empty());
    }

    #[test]
    fn no_synth_leaves_dictionaries_empty() {
        let (idx, _) = build_index_from_tables(
            &lake(),
            None,
            BuildOptions {
                use_kb: true,
                use_synth: false,
            },
        );
        assert!(idx.synth.is_empty());
        assert!(idx.is_empty());
    }

    #[test]
    fn save_load_round_trip_and_version_check() {
        let (idx, _) = build_index_from_tables(&lake(), None, BuildOptions::default());
        let dir = tempfile::tempdir().unwrap();
        save_index(&idx, dir.path()).unwrap();
        assert_eq!(load_index(dir.path()).unwrap(), idx);

        let meta = dir.path().join(META_FILE);
        let text = std::fs::read_to_string(&meta).unwrap().replace("\"format_version\": 1", "\"format_version\": 2");
        std::fs::write(&meta, text).unwrap();
        assert!(matches!(
            load_index(dir.path()),
            Err(IndexError::Version { found: 2, expected: 1 })
        ));
        assert!(matches!(load_index(&dir.path().join("missing")), Err(IndexError::Io { .. })));
    }

    #[test]
    fn mode_from_options() {
        assert_eq!(mode_for(BuildOptions::default()), Mode::Full);
        assert_eq!(
            mode_for(BuildOptions {
                use_kb: false,
                use_synth: true
            }),
            Mode::SynthOnly
        );
    }
}
