use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    pub question: String,
    pub answer: String,
    /// Any other fields on the line (dataset name, hop count, ...).
    #[serde(flatten)]
    pub metadata: BTreeMap<String, Value>,
}

impl BenchmarkItem {
    pub fn new(id: impl Into<String>, question: impl Into<String>, answer: impl Into<String>) -> Self {
        Self { id: id.into(), question: question.into(), answer: answer.into(), metadata: BTreeMap::new() }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {message}")]
    Io { path: String, message: String },
    #[error("dataset line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset line {line}: duplicate id {id}")]
    DuplicateId { line: usize, id: String },
}

pub fn parse_dataset(text: &str) -> Result<Vec<BenchmarkItem>, DatasetError> {
    let mut items = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: BenchmarkItem =
            serde_json::from_str(line).map_err(|e| DatasetError::Parse { line: i + 1, message: e.to_string() })?;
        if !ids.insert(item.id.clone()) {
            return Err(DatasetError::DuplicateId { line: i + 1, id: item.id });
        }
        items.push(item);
    }
    Ok(items)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<BenchmarkItem>, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| DatasetError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_dataset(&text)
}

pub fn to_jsonl(items: &[BenchmarkItem]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("item serializes") + "\n")
        .collect()
}
