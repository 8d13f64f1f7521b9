//! Running queries and datasets under the four modes, scoring them, and
//! sweeping the iteration cap.
//!
//! Backends are built per item by a caller-supplied factory so that items
//! never share scripted turn counters or HTTP state. Only `evofsm` mode
//! reads and writes the experience pool.

pub mod artifacts;
pub mod dataset;
pub mod react;
pub mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, Backends};
use crate::evolution::{evolve, evolve_with, EvolutionOutcome, EvolveError, EvolveLimits, Strategy};
use crate::fsm::{FsmConfig, ToolLog};
use crate::memory::{embed, warm_start_from, ExperiencePool, PoolError, WarmStart, WarmStartParams};
use crate::reflection::{reflect, ExperienceRecord};

pub use dataset::{load_dataset, parse_dataset, BenchmarkItem, DatasetError};
pub use report::{exact_match, normalize_answer, ItemRecord, RunReport, Scorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Structured evolution with experience memory.
    Evofsm,
    /// One run of the initial machine.
    Static,
    /// Evolution by free-form instruction rewrites; topology fixed.
    Rewrite,
    /// Single agent loop, no machine.
    React,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Evofsm, Mode::Static, Mode::Rewrite, Mode::React];

    pub fn label(self) -> &'static str {
        match self {
            Mode::Evofsm => "evofsm",
            Mode::Static => "static",
            Mode::Rewrite => "rewrite",
            Mode::React => "react",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| format!("unknown mode {s:?} (evofsm, static, rewrite, react)"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HarnessParams {
    pub limits: EvolveLimits,
    pub warm: WarmStartParams,
    pub scorer: Scorer,
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Evolve(#[from] EvolveError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Pool(#[from] PoolError),
}

impl HarnessError {
    /// Work finished before the fault, if any.
    pub fn partial(&self) -> Option<&EvolutionOutcome> {
        match self {
            HarnessError::Evolve(e) => Some(&e.partial),
            _ => None,
        }
    }
}

/// Result of one query.
#[derive(Debug, Clone)]
pub struct Solved {
    pub outcome: EvolutionOutcome,
    pub prior: Option<String>,
    /// The record written to the pool, with its assigned id.
    pub record: Option<ExperienceRecord>,
}

impl Solved {
    pub fn answer(&self) -> Option<&str> {
        self.outcome.final_trajectory.final_answer.as_deref()
    }
}

/// Solves one query from `config` under `mode`.
pub fn solve(
    mode: Mode,
    config: &FsmConfig,
    query: &str,
    backends: &mut Backends,
    pool: Option<&Mutex<ExperiencePool>>,
    params: &HarnessParams,
) -> Result<Solved, HarnessError> {
    let Backends { chat, tools, embedder } = backends;
    let limits = &params.limits;
    let bare = |outcome| Solved { outcome, prior: None, record: None };
    match mode {
        Mode::Static => {
            let once = EvolveLimits { max_iterations: 1, ..*limits };
            Ok(bare(evolve(config, query, chat.as_mut(), tools, &[], &once)?))
        }
        Mode::Rewrite => Ok(bare(evolve_with(Strategy::Freeform, config, query, chat.as_mut(), tools, &[], limits)?)),
        Mode::React => {
            let mut log = ToolLog::default();
            let t = react::run_react(query, chat.as_mut(), tools, &limits.run, &mut log);
            if t.backend_fault {
                return Err(BackendError::Endpoint(t.error.unwrap_or_default()).into());
            }
            Ok(bare(EvolutionOutcome {
                final_config: config.clone(),
                succeeded: t.final_answer.is_some(),
                final_trajectory: t,
                final_tool_log: log,
                verdicts: vec![],
                op_log: vec![],
                iterations_used: 1,
                rewrites: 0,
            }))
        }
        Mode::Evofsm => {
            let ws = match (pool, embed(query, embedder.as_mut())) {
                (Some(pool), Ok(q)) => warm_start_from(config, &q, &pool.lock().expect("pool lock"), &params.warm),
                (Some(_), Err(e)) => {
                    tracing::warn!("warm start skipped, embedding failed: {e}");
                    WarmStart { config: config.clone(), prior: None, retrieved: vec![] }
                }
                (None, _) => WarmStart { config: config.clone(), prior: None, retrieved: vec![] },
            };
            let retrieved: Vec<ExperienceRecord> = ws.retrieved.iter().map(|r| r.record.clone()).collect();
            let outcome = evolve(&ws.config, query, chat.as_mut(), tools, &retrieved, limits)?;
            let record = match pool {
                Some(pool) => {
                    let rec = reflect(&outcome, query, embedder.as_mut(), chat.as_mut())?;
                    Some(pool.lock().expect("pool lock").add_record(rec)?.clone())
                }
                None => None,
            };
            Ok(Solved { outcome, prior: ws.prior, record })
        }
    }
}

/// Builds the backends for one item.
pub type BackendFactory<'a> = dyn Fn(&BenchmarkItem) -> Result<Backends, BackendError> + Sync + 'a;

fn op_counts(outcome: &EvolutionOutcome) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for e in &outcome.op_log {
        *counts.entry(e.op.edit.kind().to_string()).or_insert(0) += 1;
    }
    if outcome.rewrites > 0 {
        counts.insert("REWRITE".into(), outcome.rewrites);
    }
    counts
}

fn run_item(
    item: &BenchmarkItem,
    mode: Mode,
    config: &FsmConfig,
    params: &HarnessParams,
    factory: &BackendFactory,
    pool: Option<&Mutex<ExperiencePool>>,
) -> ItemRecord {
    let mut rec = ItemRecord {
        id: item.id.clone(),
        question: item.question.clone(),
        gold: item.answer.clone(),
        answer: None,
        correct: false,
        verdicts: vec![],
        iterations_used: 0,
        op_counts: BTreeMap::new(),
        halted_reason: crate::fsm::HaltReason::Error,
        steps: 0,
        prior: None,
        error: None,
    };
    let mut backends = match factory(item) {
        Ok(b) => b,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    let pool = if mode == Mode::Evofsm { pool } else { None };
    let outcome = match solve(mode, config, &item.question, &mut backends, pool, params) {
        Ok(s) => {
            rec.prior = s.prior;
            s.outcome
        }
        Err(e) => {
            tracing::warn!("item {}: {e}", item.id);
            rec.error = Some(e.to_string());
            match e {
                HarnessError::Evolve(e) => *e.partial,
                _ => return rec,
            }
        }
    };
    let t = &outcome.final_trajectory;
    rec.answer = t.final_answer.clone();
    rec.halted_reason = t.halted_reason;
    rec.steps = t.steps.len();
    rec.iterations_used = outcome.iterations_used;
    rec.op_counts = op_counts(&outcome);
    rec.verdicts = outcome.verdicts;
    rec.correct = match (&rec.answer, params.scorer) {
        (None, _) => false,
        (Some(a), Scorer::ExactMatch) => exact_match(a, &item.answer),
        (Some(a), Scorer::Judge) => report::judge(&item.question, a, &item.answer, backends.chat.as_mut())
            .unwrap_or_else(|e| {
                tracing::warn!("judge failed for {}: {e}; using exact match", item.id);
                exact_match(a, &item.answer)
            }),
    };
    rec
}

/// Runs every item. With more than one worker, items sharing a pool may
/// see each other's records in any order.
pub fn bench(
    items: &[BenchmarkItem],
    mode: Mode,
    config: &FsmConfig,
    params: &HarnessParams,
    factory: &BackendFactory,
    pool: Option<&Mutex<ExperiencePool>>,
    workers: usize,
) -> RunReport {
    let workers = workers.clamp(1, items.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<ItemRecord>>> = Mutex::new(vec![None; items.len()]);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let rec = run_item(item, mode, config, params, factory, pool);
                slots.lock().expect("slots lock")[i] = Some(rec);
            });
        }
    });
    let records = slots.into_inner().expect("slots lock").into_iter().map(|r| r.expect("every item ran")).collect();
    let mut report = RunReport::new(mode.label(), records);
    report.workers = workers;
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cap: usize,
    pub accuracy: Option<f64>,
    pub mean_ops: Option<f64>,
}

/// One `evofsm` benchmark per iteration cap, each against its own copy of
/// `pool`. A cap of 0 or 1 is a single run, i.e. the static machine.
pub fn sweep(
    items: &[BenchmarkItem],
    caps: &[usize],
    config: &FsmConfig,
    params: &HarnessParams,
    factory: &BackendFactory,
    pool: Option<&ExperiencePool>,
    workers: usize,
) -> Vec<SweepRow> {
    caps.iter()
        .map(|&cap| {
            let p = HarnessParams { limits: EvolveLimits { max_iterations: cap, ..params.limits }, ..*params };
            let snapshot = pool.map(|p| Mutex::new(p.snapshot()));
            let report = bench(items, Mode::Evofsm, config, &p, factory, snapshot.as_ref(), workers);
            SweepRow { cap, accuracy: report.accuracy, mean_ops: report.mean_ops }
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
    let mut s = String::from("cap,accuracy,mean_ops\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.cap, fmt(r.accuracy), fmt(r.mean_ops)));
    }
    s
}
