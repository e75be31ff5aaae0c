//! Ranked-retrieval metrics against binary ground truth and a benchmark
//! runner over a directory of query tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::SearchIndex;
use crate::kb::KbStore;
use crate::lake::ingest_table;
use crate::numfmt::format_sig12;
use crate::query::{build_query_tree, search_top_k, Mode};

pub const INTENT_MANIFEST: &str = "intents.csv";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("k must be at least 1")]
    ZeroK,
}

/// How the mean over ranks is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapVariant {
    /// Mean of P@i over every returned rank i up to k.
    #[default]
    AllRanks,
    /// Mean of P@i over the relevant ranks, divided by min(k, |truth|).
    Standard,
}

impl std::str::FromStr for MapVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all-ranks" => Ok(MapVariant::AllRanks),
            "standard" => Ok(MapVariant::Standard),
            other => Err(format!("unknown MAP variant {other:?} (expected all-ranks or standard)")),
        }
    }
}

/// Query table id -> ids of the lake tables unionable with it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth(pub BTreeMap<String, BTreeSet<String>>);

impl GroundTruth {
    pub fn get(&self, query: &str) -> Option<&BTreeSet<String>> {
        self.0.get(query)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Reads `query_table_id,data_lake_table_id` rows after a header line.
pub fn load_ground_truth(path: &Path) -> Result<GroundTruth, EvalError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut truth = GroundTruth::default();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let (Some(q), Some(t)) = (record.get(0), record.get(1)) else {
            return Err(EvalError::Format {
                path: path.to_path_buf(),
                reason: format!("expected two fields, got {}", record.len()),
            });
        };
        truth.0.entry(q.trim().to_string()).or_default().insert(t.trim().to_string());
    }
    Ok(truth)
}

fn csv_error(path: &Path, e: csv::Error) -> EvalError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => EvalError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => EvalError::Format {
            path: path.to_path_buf(),
            reason: format!("{other:?}"),
        },
    }
}

fn hits_at<S: AsRef<str>>(result: &[S], truth: &BTreeSet<String>, k: usize) -> usize {
    result.iter().take(k).filter(|t| truth.contains(t.as_ref())).count()
}

/// `(P@k, R@k)`. Missing ranks count as misses, so P@k always divides by
/// `k`. R@k is `None` when the truth set is empty.
pub fn precision_recall_at_k<S: AsRef<str>>(result: &[S], truth: &BTreeSet<String>, k: usize) -> (f64, Option<f64>) {
    assert!(k >= 1, "k must be at least 1");
    let hits = hits_at(result, truth, k) as f64;
    let recall = (!truth.is_empty()).then(|| hits / truth.len() as f64);
    (hits / k as f64, recall)
}

pub fn map_at_k<S: AsRef<str>>(result: &[S], truth: &BTreeSet<String>, k: usize, variant: MapVariant) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    let n = k.min(result.len());
    if n == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, t) in result.iter().take(n).enumerate() {
        let relevant = truth.contains(t.as_ref());
        if relevant {
            hits += 1;
        }
        let p = hits as f64 / (i + 1) as f64;
        match variant {
            MapVariant::AllRanks => sum += p,
            MapVariant::Standard if relevant => sum += p,
            MapVariant::Standard => {}
        }
    }
    match variant {
        MapVariant::AllRanks => sum / n as f64,
        MapVariant::Standard if truth.is_empty() => 0.0,
        MapVariant::Standard => sum / k.min(truth.len()) as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryReport {
    pub query_id: String,
    pub returned: Vec<String>,
    pub precision: f64,
    pub recall: Option<f64>,
    pub average_precision: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub k: usize,
    pub mode: Mode,
    pub map_variant: MapVariant,
    pub queries: Vec<QueryReport>,
    pub skipped: Vec<String>,
    pub mean_precision: Option<f64>,
    /// Over queries whose truth set is non-empty.
    pub mean_recall: Option<f64>,
    pub mean_average_precision: Option<f64>,
}

impl EvalReport {
    pub fn new(k: usize, mode: Mode, map_variant: MapVariant, mut queries: Vec<QueryReport>, skipped: Vec<String>) -> Self {
        queries.sort_by(|a, b| a.query_id.cmp(&b.query_id));
        let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        Self {
            k,
            mode,
            map_variant,
            mean_precision: mean(queries.iter().map(|q| q.precision).collect()),
            mean_recall: mean(queries.iter().filter_map(|q| q.recall).collect()),
            mean_average_precision: mean(queries.iter().map(|q| q.average_precision).collect()),
            queries,
            skipped,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_tsv(&self) -> String {
        let opt = |x: Option<f64>| x.map(format_sig12).unwrap_or_default();
        let k = self.k;
        let mut out = format!("query_id\tp@{k}\tr@{k}\tmap@{k}\treturned\n");
        for q in &self.queries {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                q.query_id,
                format_sig12(q.precision),
                opt(q.recall),
                format_sig12(q.average_precision),
                q.returned.len()
            );
        }
        let _ = writeln!(
            out,
            "mean\t{}\t{}\t{}\t",
            opt(self.mean_precision),
            opt(self.mean_recall),
            opt(self.mean_average_precision)
        );
        out
    }

    /// Writes `report.json` and `report.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir).map_err(|source| EvalError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for (name, body) in [("report.json", self.to_json()), ("report.tsv", self.to_tsv())] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|source| EvalError::Io { path, source })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchmarkConfig {
    pub k: usize,
    pub mode: Mode,
    pub map_variant: MapVariant,
}

/// Reads `intents.csv` (`query_table_id,intent` after a header). The intent
/// is a header name or a 0-based column index.
pub fn load_intents(queries_dir: &Path) -> Result<BTreeMap<String, String>, EvalError> {
    let path = queries_dir.join(INTENT_MANIFEST);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| csv_error(&path, e))?;
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&path, e))?;
        match (record.get(0), record.get(1)) {
            (Some(q), Some(i)) => {
                out.insert(q.trim().to_string(), i.trim().to_string());
            }
            _ => {
                return Err(EvalError::Format {
                    path,
                    reason: "expected query_table_id,intent".into(),
                })
            }
        }
    }
    Ok(out)
}

/// Runs every query table in `queries_dir` against `idx` and scores the
/// rankings. Queries without a manifest entry, or whose file cannot be read,
/// are skipped with a warning.
pub fn run_benchmark(
    idx: &SearchIndex,
    kb: Option<&KbStore>,
    queries_dir: &Path,
    truth: &GroundTruth,
    cfg: BenchmarkConfig,
) -> Result<EvalReport, EvalError> {
    if cfg.k == 0 {
        return Err(EvalError::ZeroK);
    }
    let intents = match load_intents(queries_dir) {
        Ok(m) => m,
        Err(EvalError::Io { path, .. }) => {
            log::warn!("no intent manifest at {}; every query is skipped", path.display());
            BTreeMap::new()
        }
        Err(e) => return Err(e),
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(queries_dir)
        .map_err(|source| EvalError::Io {
            path: queries_dir.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
                && p.file_name().is_some_and(|n| n != INTENT_MANIFEST)
        })
        .collect();
    files.sort();

    let mut skipped = Vec::new();
    let mut jobs = Vec::new();
    for path in files {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        match intents.get(&id) {
            Some(intent) => jobs.push((id, path, intent.clone())),
            None => {
                log::warn!("query {id} has no intent manifest entry; skipped");
                skipped.push(id);
            }
        }
    }

    let outcomes: Vec<Result<QueryReport, String>> = jobs
        .par_iter()
        .map(|(id, path, intent)| {
            let q = ingest_table(path).map_err(|e| {
                log::warn!("query {id}: {e}; skipped");
                id.clone()
            })?;
            let Some(col) = q.resolve_column(intent) else {
                log::warn!("query {id}: no column {intent:?}; skipped");
                return Err(id.clone());
            };
            let (returned, error) = match build_query_tree(&q, col, kb, &idx.synth) {
                Ok(tree) => (
                    search_top_k(idx, &tree, cfg.k, cfg.mode)
                        .into_iter()
                        .map(|r| r.table_id)
                        .collect(),
                    None,
                ),
                Err(e) => {
                    log::warn!("query {id}: {e}");
                    (Vec::new(), Some(e.to_string()))
                }
            };
            Ok(score_query(id, returned, truth, cfg, error))
        })
        .collect();

    let mut reports = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => reports.push(r),
            Err(id) => skipped.push(id),
        }
    }
    skipped.sort();
    Ok(EvalReport::new(cfg.k, cfg.mode, cfg.map_variant, reports, skipped))
}

pub fn score_query(
    id: &str,
    returned: Vec<String>,
    truth: &GroundTruth,
    cfg: BenchmarkConfig,
    error: Option<String>,
) -> QueryReport {
    let empty = BTreeSet::new();
    let t = truth.get(id).unwrap_or(&empty);
    if t.is_empty() {
        log::warn!("query {id} has no ground truth; recall not reported");
    }
    let (precision, recall) = precision_recall_at_k(&returned, t, cfg.k);
    QueryReport {
        query_id: id.to_string(),
        precision,
        recall,
        average_precision: map_at_k(&returned, t, cfg.k, cfg.map_variant),
        returned,
        error,
    }
}
