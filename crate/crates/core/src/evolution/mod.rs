//! Critic-driven self-evolution restricted to four atomic edits.
//!
//! Each iteration runs the machine from scratch, asks the critic for a
//! verdict, and on failure asks the proposer for ops that are applied in
//! order. A rejected op is skipped; the rest still apply.

mod freeform;
mod ops;
mod propose;

use serde::{Deserialize, Serialize};

pub use freeform::apply_freeform_rewrite;
pub use ops::{
    apply_op, apply_op_with, undo, undo_with, AtomicOp, OpEdit, OpKind, OpRejectCode, OpRejected, Rewire,
};
pub use propose::{
    parse_ops, propose_ops, propose_ops_with_feedback, render_config, ProposeError, MAX_OPS_PER_PROPOSAL,
};

use crate::backends::{BackendError, ChatBackend, ToolRegistry};
use crate::critic::{critique, Verdict};
use crate::fsm::{run_logged, FsmConfig, RunLimits, ToolLog, Trajectory, DEFAULT_MAX_STATES};
use crate::reflection::ExperienceRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpLogEntry {
    pub iteration: usize,
    pub op: AtomicOp,
    pub inverse: AtomicOp,
    pub pre_version: u64,
    pub post_version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolveLimits {
    /// Runs per episode, counting the first.
    pub max_iterations: usize,
    pub max_states: usize,
    pub run: RunLimits,
}

impl Default for EvolveLimits {
    fn default() -> Self {
        Self { max_iterations: 3, max_states: DEFAULT_MAX_STATES, run: RunLimits::default() }
    }
}

/// How a failed iteration changes the machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Atomic ops from the proposer.
    Structured,
    /// One-shot instruction rewrite; the ablation baseline.
    Freeform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionOutcome {
    pub final_config: FsmConfig,
    pub final_trajectory: Trajectory,
    #[serde(default)]
    pub final_tool_log: ToolLog,
    pub verdicts: Vec<Verdict>,
    pub op_log: Vec<OpLogEntry>,
    pub iterations_used: usize,
    pub succeeded: bool,
    /// Freeform rewrites applied (rewrite ablation only).
    #[serde(default)]
    pub rewrites: usize,
}

#[derive(Debug, thiserror::Error)]
#[error("evolution aborted after {} iteration(s): {source}", partial.iterations_used)]
pub struct EvolveError {
    pub source: BackendError,
    /// Everything done before the fault, including the op log.
    pub partial: Box<EvolutionOutcome>,
}

struct Iteration {
    config: FsmConfig,
    trajectory: Trajectory,
    log: ToolLog,
}

struct Episode {
    verdicts: Vec<Verdict>,
    op_log: Vec<OpLogEntry>,
    iterations: Vec<Iteration>,
    passed: Option<usize>,
    rewrites: usize,
}

impl Episode {
    fn outcome(mut self, fallback: &FsmConfig, query: &str) -> EvolutionOutcome {
        let idx = self.passed.or(self.iterations.len().checked_sub(1));
        let iterations_used = self.iterations.len();
        let (final_config, final_trajectory, final_tool_log) = match idx {
            Some(i) => {
                let it = self.iterations.swap_remove(i);
                (it.config, it.trajectory, it.log)
            }
            None => (fallback.clone(), Trajectory::new(query), ToolLog::default()),
        };
        EvolutionOutcome {
            final_config,
            final_trajectory,
            final_tool_log,
            verdicts: self.verdicts,
            op_log: self.op_log,
            iterations_used,
            succeeded: self.passed.is_some(),
            rewrites: self.rewrites,
        }
    }
}

/// Structured evolution of `initial` on one query.
pub fn evolve(
    initial: &FsmConfig,
    query: &str,
    chat: &mut dyn ChatBackend,
    tools: &mut ToolRegistry,
    retrieved: &[ExperienceRecord],
    limits: &EvolveLimits,
) -> Result<EvolutionOutcome, EvolveError> {
    evolve_with(Strategy::Structured, initial, query, chat, tools, retrieved, limits)
}

pub fn evolve_with(
    strategy: Strategy,
    initial: &FsmConfig,
    query: &str,
    chat: &mut dyn ChatBackend,
    tools: &mut ToolRegistry,
    retrieved: &[ExperienceRecord],
    limits: &EvolveLimits,
) -> Result<EvolutionOutcome, EvolveError> {
    let max_iterations = limits.max_iterations.max(1);
    let mut ep = Episode { verdicts: Vec::new(), op_log: Vec::new(), iterations: Vec::new(), passed: None, rewrites: 0 };
    let mut config = initial.clone();

    macro_rules! bail {
        ($err:expr) => {
            return Err(EvolveError { source: $err, partial: Box::new(ep.outcome(initial, query)) })
        };
    }

    for iteration in 1..=max_iterations {
        let mut log = ToolLog::default();
        let trajectory = run_logged(&config, query, chat, tools, &limits.run, &mut log);
        let fault = trajectory
            .backend_fault
            .then(|| BackendError::Endpoint(trajectory.error.clone().unwrap_or_default()));
        ep.iterations.push(Iteration { config: config.clone(), trajectory, log });
        if let Some(e) = fault {
            bail!(e);
        }
        let trajectory = &ep.iterations.last().expect("just pushed").trajectory;
        let verdict = match critique(query, trajectory, chat) {
            Ok(v) => v,
            Err(e) => bail!(e),
        };
        let passed = verdict.passed;
        ep.verdicts.push(verdict);
        if passed {
            ep.passed = Some(ep.iterations.len() - 1);
            break;
        }
        if iteration == max_iterations {
            break;
        }
        let verdict = ep.verdicts.last().expect("just pushed");
        match strategy {
            Strategy::Freeform => match apply_freeform_rewrite(&config, verdict, chat) {
                Ok(next) => {
                    config = next;
                    ep.rewrites += 1;
                }
                Err(e) => bail!(e),
            },
            Strategy::Structured => {
                let trajectory = &ep.iterations.last().expect("just pushed").trajectory;
                match improve(&config, verdict, trajectory, retrieved, chat, iteration, limits) {
                    Ok(Improvement::Applied(next, entries)) => {
                        config = next;
                        ep.op_log.extend(entries);
                    }
                    Ok(Improvement::NothingApplied) => {}
                    Ok(Improvement::Halt) => break,
                    Err(e) => bail!(e),
                }
            }
        }
    }
    Ok(ep.outcome(initial, query))
}

enum Improvement {
    Applied(FsmConfig, Vec<OpLogEntry>),
    NothingApplied,
    /// The proposer produced nothing usable twice.
    Halt,
}

/// Proposes and applies ops for one failed iteration, re-prompting once
/// with the parse error or the rejection reasons.
fn improve(
    config: &FsmConfig,
    verdict: &Verdict,
    trajectory: &Trajectory,
    retrieved: &[ExperienceRecord],
    chat: &mut dyn ChatBackend,
    iteration: usize,
    limits: &EvolveLimits,
) -> Result<Improvement, BackendError> {
    let mut feedback: Option<String> = None;
    for attempt in 0..2 {
        let ops = match propose_ops_with_feedback(verdict, config, trajectory, retrieved, chat, feedback.as_deref()) {
            Ok(ops) => ops,
            Err(ProposeError::Backend(e)) => return Err(e),
            Err(e) => {
                tracing::warn!("iteration {iteration}: {e}");
                if attempt == 1 {
                    return Ok(Improvement::Halt);
                }
                feedback = Some(e.to_string());
                continue;
            }
        };
        let mut current = config.clone();
        let mut entries = Vec::new();
        let mut rejections = Vec::new();
        for op in ops {
            match apply_op_with(&current, &op, limits.max_states) {
                Ok((next, inverse)) => {
                    entries.push(OpLogEntry {
                        iteration,
                        op,
                        inverse,
                        pre_version: current.version,
                        post_version: next.version,
                    });
                    current = next;
                }
                Err(rej) => {
                    tracing::warn!("iteration {iteration}: rejected {op}: {rej}");
                    rejections.push(format!("{op}: {rej}"));
                }
            }
        }
        if !entries.is_empty() {
            return Ok(Improvement::Applied(current, entries));
        }
        feedback = Some(rejections.join("\n"));
    }
    Ok(Improvement::NothingApplied)
}
