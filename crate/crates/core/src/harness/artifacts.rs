//! On-disk run artifacts.
//!
//! A run directory is named by a hash of what determines its result
//! (machine, dataset, mode, seed), so re-running a sweep can skip finished
//! cells. `meta.json` records the inputs and, optionally, a timestamp.

use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Mode, Solved};
use crate::fsm::{serialize_config, FsmConfig};

fn short_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())[..16].to_string()
}

pub fn content_hash(text: &str) -> String {
    short_hash(&[text])
}

/// Directory name for a run: `<mode>-<16 hex>`.
pub fn run_id(config: &FsmConfig, dataset: &str, mode: Mode, seed: u64) -> String {
    let cfg = serialize_config(config);
    format!("{mode}-{}", short_hash(&[&cfg, dataset, mode.label(), &seed.to_string()]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub mode: Mode,
    pub seed: u64,
    pub config_hash: String,
    pub dataset_hash: String,
    /// Unix seconds; omitted for reproducible directories.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<u64>,
}

impl RunMeta {
    pub fn new(config: &FsmConfig, dataset: &str, mode: Mode, seed: u64, timestamp: bool) -> Self {
        Self {
            mode,
            seed,
            config_hash: content_hash(&serialize_config(config)),
            dataset_hash: content_hash(dataset),
            created_at: timestamp.then(|| {
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0)
            }),
        }
    }
}

pub fn write_meta(dir: &Path, meta: &RunMeta) -> io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("meta.json");
    std::fs::write(&path, serde_json::to_string_pretty(meta).expect("meta serializes") + "\n")?;
    Ok(path)
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items.iter().map(|i| serde_json::to_string(i).expect("serializable") + "\n").collect()
}

/// Writes trajectory, verdicts, op log, final machine, tool payloads and
/// the answer (when there is one). Returns the files written.
pub fn write_run_artifacts(dir: &Path, solved: &Solved) -> io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let o = &solved.outcome;
    let pretty = |v: &dyn erased::Json| v.pretty();
    let mut files = vec![
        ("trajectory.json", pretty(&o.final_trajectory)),
        ("verdicts.json", pretty(&o.verdicts)),
        ("op_log.jsonl", jsonl(&o.op_log)),
        ("final_config.json", serialize_config(&o.final_config)),
        ("tool_log.jsonl", jsonl(&o.final_tool_log.payloads)),
    ];
    if let Some(a) = solved.answer() {
        files.push(("answer.txt", format!("{a}\n")));
    }
    let mut written = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        std::fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

mod erased {
    pub trait Json {
        fn pretty(&self) -> String;
    }

    impl<T: serde::Serialize> Json for T {
        fn pretty(&self) -> String {
            serde_json::to_string_pretty(self).expect("serializable") + "\n"
        }
    }
}
