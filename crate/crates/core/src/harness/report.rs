//! Scoring and benchmark reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, ChatBackend, ChatRequest, Message, Role};
use crate::critic::Verdict;
use crate::fsm::HaltReason;

/// Lowercase, drop punctuation and the articles a/an/the, collapse spaces.
pub fn normalize_answer(s: &str) -> String {
    let cleaned: String = s
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    cleaned
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(predicted: &str, gold: &str) -> bool {
    normalize_answer(predicted) == normalize_answer(gold)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    #[default]
    ExactMatch,
    /// Ask the judge role; falls back to exact match if the reply is unclear.
    Judge,
}

/// Asks the judge whether `predicted` answers `question` like `gold` does.
pub fn judge(question: &str, predicted: &str, gold: &str, chat: &mut dyn ChatBackend) -> Result<bool, BackendError> {
    let request = ChatRequest::new(
        Role::Judge,
        vec![
            Message::system("Decide whether the predicted answer matches the reference answer. Reply CORRECT or INCORRECT."),
            Message::user(format!("Question: {question}\nReference: {gold}\nPredicted: {predicted}\n")),
        ],
    );
    let reply = chat.chat(&request)?.text.to_uppercase();
    Ok(if reply.contains("INCORRECT") {
        false
    } else if reply.contains("CORRECT") {
        true
    } else {
        tracing::warn!("judge reply unclear; using exact match");
        exact_match(predicted, gold)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub question: String,
    pub gold: String,
    pub answer: Option<String>,
    pub correct: bool,
    pub verdicts: Vec<Verdict>,
    pub iterations_used: usize,
    /// Applied ops by kind label.
    pub op_counts: BTreeMap<String, usize>,
    pub halted_reason: HaltReason,
    pub steps: usize,
    /// Success record the machine was warm-started from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ItemRecord {
    pub fn total_ops(&self) -> usize {
        self.op_counts.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub items: Vec<ItemRecord>,
    pub correct: usize,
    pub total: usize,
    /// `None` for an empty dataset.
    pub accuracy: Option<f64>,
    pub mean_iterations: Option<f64>,
    pub mean_steps: Option<f64>,
    pub mean_ops: Option<f64>,
    /// Results are only reproducible with a single worker.
    #[serde(default = "one")]
    pub workers: usize,
}

fn one() -> usize {
    1
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl RunReport {
    pub fn new(mode: impl Into<String>, items: Vec<ItemRecord>) -> Self {
        let total = items.len();
        let correct = items.iter().filter(|i| i.correct).count();
        Self {
            mode: mode.into(),
            accuracy: (total > 0).then(|| correct as f64 / total as f64),
            mean_iterations: mean(items.iter().map(|i| i.iterations_used as f64)),
            mean_steps: mean(items.iter().map(|i| i.steps as f64)),
            mean_ops: mean(items.iter().map(|i| i.total_ops() as f64)),
            correct,
            total,
            items,
            workers: 1,
        }
    }

    /// Aligned text table, one row per item plus a summary line.
    pub fn table(&self) -> String {
        let header = ["id", "correct", "iters", "ops", "steps", "halt", "answer"];
        let rows: Vec<[String; 7]> = self
            .items
            .iter()
            .map(|i| {
                [
                    i.id.clone(),
                    if i.correct { "yes" } else { "no" }.to_string(),
                    i.iterations_used.to_string(),
                    i.total_ops().to_string(),
                    i.steps.to_string(),
                    halt_label(i.halted_reason).to_string(),
                    i.answer.as_deref().map(|a| crate::fsm::truncate_chars(a, 60)).unwrap_or_else(|| "-".into()),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let mut s = cells
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ");
            s.truncate(s.trim_end().len());
            s.push('\n');
            s
        };
        let mut out = line(&header.map(String::from));
        for r in &rows {
            out.push_str(&line(r));
        }
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "n/a".into());
        out.push_str(&format!(
            "mode={} accuracy={} ({}/{}) mean_iterations={} mean_steps={} mean_ops={} workers={}\n",
            self.mode,
            self.accuracy.map(|a| format!("{a:.3}")).unwrap_or_else(|| "n/a".into()),
            self.correct,
            self.total,
            fmt(self.mean_iterations),
            fmt(self.mean_steps),
            fmt(self.mean_ops),
            self.workers,
        ));
        out
    }
}

pub fn halt_label(h: HaltReason) -> &'static str {
    match h {
        HaltReason::Terminal => "TERMINAL",
        HaltReason::StepCap => "STEP_CAP",
        HaltReason::LoopDetected => "LOOP_DETECTED",
        HaltReason::Error => "ERROR",
    }
}
