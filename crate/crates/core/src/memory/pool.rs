//! Append-only JSONL experience pool.
//!
//! One record per line. Appends are flushed and synced before returning.
//! Opening a pool tolerates a torn final line (an append interrupted before
//! its newline was written) by truncating it away; any other unparseable
//! line is corruption.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::embed::cosine;
use crate::reflection::{ExperienceRecord, Outcome};

#[derive(Debug, thiserror::Error)]
pub enum PoolError {
    #[error("embedding dimension mismatch: pool has {expected}, record has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("corrupt pool line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("pool invariant violated at line {line}: {message}")]
    Invariant { line: usize, message: String },
}

fn storage(path: &Path, e: impl std::fmt::Display) -> PoolError {
    PoolError::Storage(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RecordFilter {
    All,
    SuccessOnly,
    FailureOnly,
}

impl RecordFilter {
    pub fn admits(self, outcome: Outcome) -> bool {
        match self {
            RecordFilter::All => true,
            RecordFilter::SuccessOnly => outcome == Outcome::Success,
            RecordFilter::FailureOnly => outcome == Outcome::Failure,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub record: ExperienceRecord,
    pub similarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PoolStats {
    pub success: usize,
    pub failure: usize,
}

impl std::fmt::Display for PoolStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} success / {} failure", self.success, self.failure)
    }
}

#[derive(Debug)]
pub struct ExperiencePool {
    records: Vec<ExperienceRecord>,
    embedding_dim: usize,
    path: Option<PathBuf>,
}

struct Scan {
    records: Vec<ExperienceRecord>,
    /// Byte length of the well-formed prefix.
    good_len: u64,
    torn_tail: bool,
    /// The last record parsed but its newline was never written.
    missing_newline: bool,
}

/// Parses pool text. `lenient` accepts a malformed final line that lacks
/// its newline (a torn append).
fn scan_text(text: &str, lenient: bool) -> Result<Scan, PoolError> {
    let mut records = Vec::new();
    let mut offset = 0usize;
    let mut good_len = 0u64;
    let mut lines = text.split_inclusive('\n').enumerate().peekable();
    while let Some((i, raw)) = lines.next() {
        offset += raw.len();
        let complete = raw.ends_with('\n');
        let line = raw.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            if complete {
                good_len = offset as u64;
            }
            continue;
        }
        match serde_json::from_str::<ExperienceRecord>(line) {
            Ok(r) if complete => {
                records.push(r);
                good_len = offset as u64;
            }
            Ok(r) => {
                // A complete record missing only its newline; always last.
                records.push(r);
                return Ok(Scan { records, good_len: offset as u64, torn_tail: false, missing_newline: true });
            }
            Err(_) if lenient && !complete && lines.peek().is_none() => {
                return Ok(Scan { records, good_len, torn_tail: true, missing_newline: false });
            }
            Err(e) => return Err(PoolError::Corrupt { line: i + 1, message: e.to_string() }),
        }
    }
    Ok(Scan { records, good_len, torn_tail: false, missing_newline: false })
}

fn read_file(path: &Path) -> Result<String, PoolError> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| storage(path, e))?;
    Ok(text)
}

impl ExperiencePool {
    /// In-memory copy of the records; appends to it never touch the file.
    pub fn snapshot(&self) -> Self {
        Self { records: self.records.clone(), embedding_dim: self.embedding_dim, path: None }
    }

    pub fn in_memory(embedding_dim: usize) -> Self {
        Self { records: Vec::new(), embedding_dim, path: None }
    }

    /// Opens (or creates) a pool file. A torn final line is dropped and the
    /// file truncated to its last complete record.
    pub fn open(path: impl AsRef<Path>, embedding_dim: usize) -> Result<Self, PoolError> {
        let path = path.as_ref().to_path_buf();
        if !path.exists() {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| storage(dir, e))?;
            }
            File::create(&path).map_err(|e| storage(&path, e))?;
            return Ok(Self { records: Vec::new(), embedding_dim, path: Some(path) });
        }
        let text = read_file(&path)?;
        let scan = scan_text(&text, true)?;
        if scan.torn_tail || scan.good_len < text.len() as u64 {
            tracing::warn!("dropping torn trailing line from {}", path.display());
            let f = OpenOptions::new().write(true).open(&path).map_err(|e| storage(&path, e))?;
            f.set_len(scan.good_len).map_err(|e| storage(&path, e))?;
            f.sync_all().map_err(|e| storage(&path, e))?;
        }
        if scan.missing_newline {
            let mut f = OpenOptions::new().append(true).open(&path).map_err(|e| storage(&path, e))?;
            f.write_all(b"\n").and_then(|_| f.sync_data()).map_err(|e| storage(&path, e))?;
        }
        for r in &scan.records {
            if r.query_embedding.len() != embedding_dim {
                return Err(PoolError::DimensionMismatch { expected: embedding_dim, found: r.query_embedding.len() });
            }
        }
        Ok(Self { records: scan.records, embedding_dim, path: Some(path) })
    }

    /// Parses every line strictly, without modifying the file.
    pub fn scan(path: impl AsRef<Path>) -> Result<Vec<ExperienceRecord>, PoolError> {
        let path = path.as_ref();
        Ok(scan_text(&read_file(path)?, false)?.records)
    }

    /// Strict parse plus invariant checks: shared dimension, unit-norm
    /// embeddings, unique ids, increasing `created_at`, and no failure
    /// constraints on successes.
    pub fn verify(path: impl AsRef<Path>) -> Result<PoolStats, PoolError> {
        let records = Self::scan(path)?;
        let mut stats = PoolStats::default();
        let mut ids = std::collections::BTreeSet::new();
        let dim = records.first().map(|r| r.query_embedding.len());
        for (i, r) in records.iter().enumerate() {
            let line = i + 1;
            let bad = |message: String| Err(PoolError::Invariant { line, message });
            if Some(r.query_embedding.len()) != dim {
                return bad(format!("embedding dimension {} differs from {}", r.query_embedding.len(), dim.unwrap_or(0)));
            }
            let norm = r.query_embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return bad(format!("embedding norm {norm} is not 1"));
            }
            if !ids.insert(r.id.clone()) {
                return bad(format!("duplicate id {}", r.id));
            }
            if i > 0 && r.created_at <= records[i - 1].created_at {
                return bad(format!("created_at {} does not increase", r.created_at));
            }
            match r.outcome {
                Outcome::Success if !r.failure_constraints.is_empty() => {
                    return bad("success record carries failure constraints".into());
                }
                Outcome::Success => stats.success += 1,
                Outcome::Failure => stats.failure += 1,
            }
        }
        Ok(stats)
    }

    pub fn records(&self) -> &[ExperienceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, id: &str) -> Option<&ExperienceRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn stats(&self) -> PoolStats {
        let success = self.records.iter().filter(|r| r.outcome == Outcome::Success).count();
        PoolStats { success, failure: self.records.len() - success }
    }

    /// Appends a record, assigning its id and `created_at`. File-backed
    /// pools persist the line before the record becomes visible.
    pub fn add_record(&mut self, mut record: ExperienceRecord) -> Result<&ExperienceRecord, PoolError> {
        if record.query_embedding.len() != self.embedding_dim {
            return Err(PoolError::DimensionMismatch {
                expected: self.embedding_dim,
                found: record.query_embedding.len(),
            });
        }
        let seq = self.records.last().map_or(0, |r| r.created_at) + 1;
        record.created_at = seq;
        record.id = format!("exp-{seq:06}");
        if record.outcome == Outcome::Success {
            record.failure_constraints.clear();
        }
        if let Some(path) = &self.path {
            let mut line = serde_json::to_string(&record).map_err(|e| storage(path, e))?;
            line.push('\n');
            let mut f = OpenOptions::new().append(true).open(path).map_err(|e| storage(path, e))?;
            f.write_all(line.as_bytes()).map_err(|e| storage(path, e))?;
            f.sync_data().map_err(|e| storage(path, e))?;
        }
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    /// The `k` most similar records under `filter`, by cosine similarity
    /// descending, ties broken by `created_at` ascending.
    pub fn retrieve_top_k(&self, query_embedding: &[f64], k: usize, filter: RecordFilter) -> Vec<RetrievalResult> {
        let mut scored: Vec<(f64, &ExperienceRecord)> = self
            .records
            .iter()
            .filter(|r| filter.admits(r.outcome))
            .map(|r| (cosine(query_embedding, &r.query_embedding), r))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.created_at.cmp(&b.1.created_at)));
        scored
            .into_iter()
            .take(k)
            .map(|(similarity, r)| RetrievalResult { record: r.clone(), similarity })
            .collect()
    }
}
