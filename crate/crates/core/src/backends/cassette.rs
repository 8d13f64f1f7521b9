//! Record/replay of chat exchanges.
//!
//! A cassette is a JSONL file of `{fingerprint, role, response}` lines. The
//! fingerprint hashes the normalized request, so timestamps and run ids do
//! not break replay. Identical requests replay their recorded responses in
//! order; once exhausted, the last one repeats.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, ChatBackend, ChatReply, ChatRequest, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CassetteMode {
    Record,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fingerprint: String,
    pub role: Role,
    pub response: String,
}

fn timestamp_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}:\d{2}(?:\.\d+)?(?:Z|[+-]\d{2}:?\d{2})?")
            .expect("valid regex")
    })
}

fn run_id_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\brun-[0-9a-f]{6,}\b").expect("valid regex"))
}

/// Strips volatile tokens and collapses whitespace.
pub fn normalize_for_fingerprint(text: &str) -> String {
    let t = timestamp_re().replace_all(text, "<ts>");
    let t = run_id_re().replace_all(&t, "<run>");
    t.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn fingerprint(request: &ChatRequest) -> String {
    let mut h = Sha256::new();
    h.update(request.role.label().as_bytes());
    for m in &request.messages {
        h.update([0u8]);
        h.update(format!("{:?}", m.role).as_bytes());
        h.update([0u8]);
        h.update(normalize_for_fingerprint(&m.content).as_bytes());
    }
    hex::encode(h.finalize())
}

/// Number of differing bits between two hex fingerprints; unequal lengths
/// count the surplus characters as fully different.
fn hex_distance(a: &str, b: &str) -> u32 {
    let mut d = 0;
    let (a, b) = (a.as_bytes(), b.as_bytes());
    for i in 0..a.len().max(b.len()) {
        match (a.get(i), b.get(i)) {
            (Some(x), Some(y)) => {
                let nx = (*x as char).to_digit(16).unwrap_or(0);
                let ny = (*y as char).to_digit(16).unwrap_or(0);
                d += (nx ^ ny).count_ones();
            }
            _ => d += 4,
        }
    }
    d
}

pub struct CassetteChat {
    mode: CassetteMode,
    path: PathBuf,
    entries: Vec<CassetteEntry>,
    index: HashMap<String, Vec<usize>>,
    cursors: HashMap<String, usize>,
    inner: Option<Box<dyn ChatBackend>>,
}

impl CassetteChat {
    /// Opens a cassette for replay. Misses are errors; `inner` is never consulted.
    pub fn replay(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref().to_path_buf();
        let entries = read_entries(&path)?;
        Ok(Self::build(CassetteMode::Replay, path, entries, None))
    }

    /// Wraps `inner`, appending every exchange to the cassette file.
    pub fn record(path: impl AsRef<Path>, inner: Box<dyn ChatBackend>) -> Result<Self, BackendError> {
        let path = path.as_ref().to_path_buf();
        let entries = if path.exists() { read_entries(&path)? } else { Vec::new() };
        Ok(Self::build(CassetteMode::Record, path, entries, Some(inner)))
    }

    fn build(
        mode: CassetteMode,
        path: PathBuf,
        entries: Vec<CassetteEntry>,
        inner: Option<Box<dyn ChatBackend>>,
    ) -> Self {
        let mut index: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            index.entry(e.fingerprint.clone()).or_default().push(i);
        }
        Self { mode, path, entries, index, cursors: HashMap::new(), inner }
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    pub fn entries(&self) -> &[CassetteEntry] {
        &self.entries
    }

    fn nearest(&self, fp: &str) -> Option<String> {
        self.entries
            .iter()
            .map(|e| (hex_distance(fp, &e.fingerprint), &e.fingerprint))
            .min_by_key(|(d, _)| *d)
            .map(|(_, f)| f.clone())
    }

    fn append(&mut self, entry: CassetteEntry) -> Result<(), BackendError> {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| BackendError::Storage(format!("{}: {e}", self.path.display())))?;
        let line = serde_json::to_string(&entry).expect("entry serializes");
        writeln!(file, "{line}").map_err(|e| BackendError::Storage(e.to_string()))?;
        self.index
            .entry(entry.fingerprint.clone())
            .or_default()
            .push(self.entries.len());
        self.entries.push(entry);
        Ok(())
    }
}

fn read_entries(path: &Path) -> Result<Vec<CassetteEntry>, BackendError> {
    let file = File::open(path).map_err(|e| BackendError::Storage(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| BackendError::Storage(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| BackendError::Storage(format!("{} line {}: {e}", path.display(), n + 1)))?;
        out.push(entry);
    }
    Ok(out)
}

impl ChatBackend for CassetteChat {
    fn chat(&mut self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        let fp = fingerprint(request);
        match self.mode {
            CassetteMode::Replay => {
                let Some(slots) = self.index.get(&fp) else {
                    return Err(BackendError::CassetteMiss { nearest: self.nearest(&fp), fingerprint: fp });
                };
                let cursor = self.cursors.entry(fp.clone()).or_insert(0);
                let slot = slots[(*cursor).min(slots.len() - 1)];
                *cursor += 1;
                Ok(ChatReply::new(self.entries[slot].response.clone(), "cassette"))
            }
            CassetteMode::Record => {
                let inner = self
                    .inner
                    .as_mut()
                    .ok_or_else(|| BackendError::InvalidInput("record mode without a backend".into()))?;
                let reply = inner.chat(request)?;
                self.append(CassetteEntry { fingerprint: fp, role: request.role, response: reply.text.clone() })?;
                Ok(reply)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Message, Script, ScriptRule, ScriptedChat};

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new(Role::Agent, vec![Message::system("sys"), Message::user(text)])
    }

    #[test]
    fn normalization_drops_timestamps_and_run_ids() {
        let a = req("at 2024-05-01T10:00:00Z in run-0a1b2c3d  go");
        let b = req("at 2025-12-31 23:59:59 in run-ffffffff go");
        assert_eq!(fingerprint(&a), fingerprint(&b));
        assert_ne!(fingerprint(&a), fingerprint(&req("at noon go")));
    }

    #[test]
    fn replay_returns_recorded_reply_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let script = Script::new(vec![ScriptRule::new(Role::Agent, "hello", "wörld ✓\n  spaced ")]);
        let mut rec = CassetteChat::record(&path, Box::new(ScriptedChat::new(script).unwrap())).unwrap();
        let original = rec.chat(&req("hello")).unwrap();

        let mut replay = CassetteChat::replay(&path).unwrap();
        let again = replay.chat(&req("hello")).unwrap();
        assert_eq!(again.text.as_bytes(), original.text.as_bytes());
    }

    #[test]
    fn miss_names_nearest_fingerprint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let recorded: Vec<String> = ["one", "two", "three"].iter().map(|t| fingerprint(&req(t))).collect();
        let lines: String = recorded
            .iter()
            .map(|fp| {
                serde_json::to_string(&CassetteEntry { fingerprint: fp.clone(), role: Role::Agent, response: "r".into() })
                    .unwrap()
                    + "\n"
            })
            .collect();
        std::fs::write(&path, lines).unwrap();

        let probe = fingerprint(&req("four"));
        // Oracle: brute-force bit distance over every recorded fingerprint.
        let bits = |a: &str, b: &str| -> u32 {
            let da = hex::decode(a).unwrap();
            let db = hex::decode(b).unwrap();
            da.iter().zip(&db).map(|(x, y)| (x ^ y).count_ones()).sum()
        };
        let expected = recorded.iter().min_by_key(|fp| bits(&probe, fp)).unwrap().clone();

        let mut replay = CassetteChat::replay(&path).unwrap();
        match replay.chat(&req("four")) {
            Err(BackendError::CassetteMiss { fingerprint, nearest }) => {
                assert_eq!(fingerprint, probe);
                assert_eq!(nearest, Some(expected));
            }
            other => panic!("expected a miss, got {other:?}"),
        }
    }

    #[test]
    fn repeated_requests_replay_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let script = Script::new(vec![
            ScriptRule::at_turn(Role::Agent, 1, "first"),
            ScriptRule::at_turn(Role::Agent, 2, "second"),
        ]);
        let mut rec = CassetteChat::record(&path, Box::new(ScriptedChat::new(script).unwrap())).unwrap();
        rec.chat(&req("same")).unwrap();
        rec.chat(&req("same")).unwrap();
        let mut replay = CassetteChat::replay(&path).unwrap();
        assert_eq!(replay.chat(&req("same")).unwrap().text, "first");
        assert_eq!(replay.chat(&req("same")).unwrap().text, "second");
        assert_eq!(replay.chat(&req("same")).unwrap().text, "second");
    }
}
