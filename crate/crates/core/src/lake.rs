//! CSV ingestion and cell normalization.
//!
//! A lake is a directory of `*.csv` files. Each file becomes a [`LakeTable`]
//! whose columns are classified as textual or non-textual; only textual
//! columns take part in annotation downstream. Column identity is positional,
//! headers are carried along as metadata only.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LakeError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed table {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("column {index} of table {table} is out of range or not textual")]
    BadColumn { table: String, index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColumnKind {
    Textual,
    NonTextual,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnData {
    pub column_index: usize,
    pub header: String,
    pub kind: ColumnKind,
    /// Distinct normalized, non-empty cell values.
    pub unique_values: BTreeSet<String>,
    /// Number of non-empty cells before deduplication.
    pub raw_cardinality: usize,
}

impl ColumnData {
    pub fn is_textual(&self) -> bool {
        self.kind == ColumnKind::Textual
    }
}

/// An ordered pair of normalized cell values taken from one row.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ValuePair {
    pub left: String,
    pub right: String,
}

impl ValuePair {
    pub fn new(left: impl Into<String>, right: impl Into<String>) -> Self {
        Self {
            left: left.into(),
            right: right.into(),
        }
    }

    pub fn reversed(&self) -> Self {
        Self::new(self.right.clone(), self.left.clone())
    }
}

impl fmt::Display for ValuePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.left, self.right)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LakeTable {
    pub table_id: String,
    pub columns: Vec<ColumnData>,
    pub row_count: usize,
    /// Normalized cells, row-major. Empty cells are kept as `""`.
    rows: Vec<Vec<String>>,
}

impl LakeTable {
    /// Builds a table from raw header and row cells. Rows must all have the
    /// header's width.
    pub fn from_rows<S: AsRef<str>>(
        table_id: impl Into<String>,
        headers: &[S],
        raw_rows: &[Vec<S>],
    ) -> Result<Self, LakeError> {
        let table_id = table_id.into();
        let width = headers.len();
        if width == 0 {
            return Err(LakeError::Format {
                path: PathBuf::from(&table_id),
                reason: "zero columns".into(),
            });
        }
        for (n, row) in raw_rows.iter().enumerate() {
            if row.len() != width {
                return Err(LakeError::Format {
                    path: PathBuf::from(&table_id),
                    reason: format!("row {} has {} fields, expected {}", n + 1, row.len(), width),
                });
            }
        }

        let mut columns = Vec::with_capacity(width);
        for (index, header) in headers.iter().enumerate() {
            let raw: Vec<&str> = raw_rows.iter().map(|r| r[index].as_ref()).collect();
            let kind = classify_column(&raw);
            let mut unique_values = BTreeSet::new();
            let mut raw_cardinality = 0;
            for cell in &raw {
                let v = normalize_value(cell);
                if !v.is_empty() {
                    raw_cardinality += 1;
                    unique_values.insert(v);
                }
            }
            columns.push(ColumnData {
                column_index: index,
                header: header.as_ref().trim().to_string(),
                kind,
                unique_values,
                raw_cardinality,
            });
        }

        let rows = raw_rows
            .iter()
            .map(|r| r.iter().map(|c| normalize_value(c.as_ref())).collect())
            .collect();

        Ok(Self {
            table_id,
            columns,
            row_count: raw_rows.len(),
            rows,
        })
    }

    pub fn column(&self, index: usize) -> Option<&ColumnData> {
        self.columns.get(index)
    }

    pub fn textual_columns(&self) -> impl Iterator<Item = &ColumnData> {
        self.columns.iter().filter(|c| c.is_textual())
    }

    /// Normalized cells of one row.
    pub fn row(&self, index: usize) -> &[String] {
        &self.rows[index]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[String]> {
        self.rows.iter().map(|r| r.as_slice())
    }

    /// Resolves a column by header (exact, then case-insensitive) and falls
    /// back to a 0-based position.
    pub fn resolve_column(&self, name_or_index: &str) -> Option<usize> {
        if let Some(c) = self.columns.iter().find(|c| c.header == name_or_index) {
            return Some(c.column_index);
        }
        let wanted = name_or_index.trim().to_lowercase();
        if let Some(c) = self.columns.iter().find(|c| c.header.to_lowercase() == wanted) {
            return Some(c.column_index);
        }
        name_or_index
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&i| i < self.columns.len())
    }

    /// Unique ordered value pairs of columns `i` and `j` taken from rows where
    /// both cells are non-empty.
    pub fn unique_value_pairs(&self, i: usize, j: usize) -> Result<BTreeSet<ValuePair>, LakeError> {
        for idx in [i, j] {
            if !self.column(idx).is_some_and(ColumnData::is_textual) {
                return Err(LakeError::BadColumn {
                    table: self.table_id.clone(),
                    index: idx,
                });
            }
        }
        if i == j {
            return Err(LakeError::BadColumn {
                table: self.table_id.clone(),
                index: j,
            });
        }
        Ok(self
            .rows
            .iter()
            .filter(|r| !r[i].is_empty() && !r[j].is_empty())
            .map(|r| ValuePair::new(r[i].clone(), r[j].clone()))
            .collect())
    }
}

pub fn unique_value_pairs(t: &LakeTable, i: usize, j: usize) -> Result<BTreeSet<ValuePair>, LakeError> {
    t.unique_value_pairs(i, j)
}

const STRIPPED: &[char] = &['.', ',', ';', ':', '!', '?', '"', '\'', '(', ')', '[', ']', '{', '}'];

/// Lowercases, strips sentence punctuation, collapses whitespace and trims.
/// Intra-token hyphens survive.
pub fn normalize_value(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    for word in lowered
        .split(|c: char| c.is_whitespace())
        .map(|w| w.replace(STRIPPED, ""))
        .filter(|w| !w.is_empty())
    {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&word);
    }
    out
}

/// Textual iff at least half of the non-empty cells fail numeric and date
/// parsing. All-empty columns are non-textual.
pub fn classify_column<S: AsRef<str>>(values: &[S]) -> ColumnKind {
    let mut non_empty = 0usize;
    let mut non_numeric = 0usize;
    for v in values {
        let v = v.as_ref().trim();
        if v.is_empty() {
            continue;
        }
        non_empty += 1;
        if !is_numeric_like(v) {
            non_numeric += 1;
        }
    }
    if non_empty == 0 {
        return ColumnKind::NonTextual;
    }
    if 2 * non_numeric >= non_empty {
        ColumnKind::Textual
    } else {
        ColumnKind::NonTextual
    }
}

const DATE_FORMATS: &[&str] = &["%Y-%m-%d", "%Y/%m/%d", "%m/%d/%Y", "%d/%m/%Y", "%d-%m-%Y", "%d.%m.%Y", "%Y%m%d"];

fn is_numeric_like(v: &str) -> bool {
    let stripped = v
        .trim_start_matches(['$', '€', '£', '+'])
        .trim_end_matches('%')
        .replace(',', "");
    if !stripped.is_empty() && stripped.parse::<f64>().is_ok() {
        return true;
    }
    // Date prefixes with a time component ("2021-03-01 10:00").
    let date_part = v.split(['T', ' ']).next().unwrap_or(v);
    DATE_FORMATS
        .iter()
        .any(|f| NaiveDate::parse_from_str(date_part, f).is_ok())
}

/// Reads one CSV file. The table id is the file stem.
pub fn ingest_table(path: &Path) -> Result<LakeTable, LakeError> {
    let bytes = std::fs::read(path).map_err(|source| LakeError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let format_err = |reason: String| LakeError::Format {
        path: path.to_path_buf(),
        reason,
    };
    let text = String::from_utf8(bytes).map_err(|e| format_err(format!("not UTF-8: {e}")))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| format_err(e.to_string()))?
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}').to_string())
        .collect();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty() && text.trim().is_empty()) {
        return Err(format_err("zero columns".into()));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| format_err(e.to_string()))?;
        rows.push(record.iter().map(str::to_string).collect::<Vec<_>>());
    }
    let table_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    LakeTable::from_rows(table_id, &headers, &rows).map_err(|e| match e {
        LakeError::Format { reason, .. } => format_err(reason),
        other => other,
    })
}

/// Tables loaded from a lake directory plus the files that failed to ingest.
#[derive(Debug, Default)]
pub struct Lake {
    pub tables: Vec<LakeTable>,
    pub skipped: Vec<(PathBuf, LakeError)>,
}

/// Ingests every `*.csv` in `dir` (non-recursive), ordered by table id.
/// Files that fail to parse are skipped and reported, not fatal.
pub fn ingest_lake(dir: &Path) -> Result<Lake, LakeError> {
    let io = |source| LakeError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
        .collect();
    paths.sort();

    let mut lake = Lake::default();
    for path in paths {
        match ingest_table(&path) {
            Ok(t) => lake.tables.push(t),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                lake.skipped.push((path, e));
            }
        }
    }
    lake.tables.sort_by(|a, b| a.table_id.cmp(&b.table_id));
    Ok(lake)
}
