use std::collections::BTreeMap;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::predicates;
use super::prompt;
use super::{ConditionKind, FsmConfig, HaltReason, StepRecord, ToolCallRecord, Trajectory, TransitionRule};
use crate::backends::{BackendError, ChatBackend, ChatRequest, Message, Role, ToolRegistry};

/// Per-run budgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLimits {
    pub max_steps: usize,
    /// A state visited more than this many times halts the run.
    pub loop_threshold: usize,
    pub max_tool_calls: usize,
    /// Number of recent steps rendered into prompts.
    pub context_steps: usize,
    /// Per-payload character bound inside prompts.
    pub context_chars: usize,
}

impl Default for RunLimits {
    fn default() -> Self {
        Self {
            max_steps: 20,
            loop_threshold: 3,
            max_tool_calls: 3,
            context_steps: 6,
            context_chars: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolPayload {
    pub step: usize,
    pub tool: String,
    pub input: String,
    pub hash: String,
    pub output: String,
}

/// Full tool payloads for a run; steps only keep digests.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolLog {
    pub payloads: Vec<ToolPayload>,
}

impl ToolLog {
    pub fn payload(&self, hash: &str) -> Option<&str> {
        self.payloads.iter().find(|p| p.hash == hash).map(|p| p.output.as_str())
    }
}

pub(crate) fn digest(output: &str) -> String {
    let h = Sha256::digest(output.as_bytes());
    format!("sha256:{}", &hex::encode(h)[..16])
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RouteError {
    #[error("no transition out of {0} fired")]
    NoTransitionFired(String),
    #[error("router reply named no candidate: {0:?}")]
    RouterParse(String),
    #[error("unknown state {0}")]
    UnknownState(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("unknown state {0}")]
    UnknownState(String),
    #[error("step cap reached")]
    StepCap,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// The chosen next state and the transition that fired.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteDecision {
    pub to_state: String,
    pub transition_id: String,
}

/// Picks the next state. Transitions are tried in (priority, id) order;
/// ones matching a forbidden edge are skipped. Router-judged transitions
/// share a single router call.
pub fn route(
    config: &FsmConfig,
    current: &str,
    trajectory: &Trajectory,
    router: &mut dyn ChatBackend,
    log: &ToolLog,
    limits: &RunLimits,
) -> Result<RouteDecision, RouteError> {
    if config.state(current).is_none() {
        return Err(RouteError::UnknownState(current.to_string()));
    }
    let candidates: Vec<&TransitionRule> = config
        .outgoing(current)
        .into_iter()
        .filter(|t| {
            let blocked = config.edge_forbidden(&t.from_state, &t.to_state);
            if blocked {
                tracing::debug!("skipping transition {} ({} -> {}): forbidden by memory", t.id, t.from_state, t.to_state);
            }
            !blocked && config.state(&t.to_state).is_some()
        })
        .collect();

    let decide = |t: &TransitionRule| RouteDecision { to_state: t.to_state.clone(), transition_id: t.id.clone() };

    // None = not asked yet; Some(None) = asked, unparseable.
    let mut router_choice: Option<Option<String>> = None;
    for t in &candidates {
        let holds = match t.condition.kind {
            ConditionKind::Always => true,
            ConditionKind::Predicate => {
                let name = t.condition.predicate.as_deref().unwrap_or_default();
                let args = t.condition.args.as_deref().unwrap_or(&[]);
                predicates::evaluate(name, args, trajectory, current).unwrap_or_else(|e| {
                    tracing::warn!("transition {}: {e}", t.id);
                    false
                })
            }
            ConditionKind::Router => {
                if router_choice.is_none() {
                    let judged: Vec<&TransitionRule> = candidates
                        .iter()
                        .copied()
                        .filter(|c| c.condition.kind == ConditionKind::Router)
                        .collect();
                    router_choice = Some(ask_router(config, current, trajectory, &judged, router, log, limits)?);
                }
                match router_choice.as_ref() {
                    Some(Some(choice)) => &t.to_state == choice,
                    _ => {
                        // Unparseable: fall back to the first ALWAYS transition.
                        return candidates
                            .iter()
                            .find(|c| c.condition.kind == ConditionKind::Always)
                            .map(|c| decide(c))
                            .ok_or_else(|| RouteError::RouterParse(current.to_string()));
                    }
                }
            }
        };
        if holds {
            return Ok(decide(t));
        }
    }
    Err(RouteError::NoTransitionFired(current.to_string()))
}

fn ask_router(
    config: &FsmConfig,
    current: &str,
    trajectory: &Trajectory,
    judged: &[&TransitionRule],
    router: &mut dyn ChatBackend,
    log: &ToolLog,
    limits: &RunLimits,
) -> Result<Option<String>, BackendError> {
    let context = prompt::render_context(trajectory, log, limits.context_steps, limits.context_chars);
    let request = ChatRequest::new(
        Role::Router,
        vec![
            Message::system(prompt::router_system()),
            Message::user(prompt::router_user(config, current, trajectory, &context, judged)),
        ],
    );
    let reply = router.chat(&request)?;
    let choice = pick_candidate(config, &reply.text, judged);
    if choice.is_none() {
        tracing::warn!("router reply named no candidate: {:?}", reply.text);
    }
    Ok(choice)
}

/// The candidate whose id or name appears earliest in the reply.
fn pick_candidate(config: &FsmConfig, reply: &str, judged: &[&TransitionRule]) -> Option<String> {
    let mut best: Option<(usize, String)> = None;
    for t in judged {
        let mut names = vec![t.to_state.as_str()];
        if let Some(s) = config.state(&t.to_state) {
            names.push(s.name.as_str());
        }
        for name in names.into_iter().filter(|n| !n.is_empty()) {
            let Ok(re) = Regex::new(&format!(r"(?i)(?:^|[^\w]){}(?:$|[^\w])", regex::escape(name))) else {
                continue;
            };
            if let Some(m) = re.find(reply) {
                if best.as_ref().is_none_or(|(pos, _)| m.start() < *pos) {
                    best = Some((m.start(), t.to_state.clone()));
                }
            }
        }
    }
    best.map(|(_, s)| s)
}

/// Runs one state: prompt the agent, execute permitted tool requests, and
/// give the agent the results. Appends the step to `trajectory`.
pub fn execute_state(
    config: &FsmConfig,
    state_id: &str,
    trajectory: &mut Trajectory,
    agent: &mut dyn ChatBackend,
    tools: &mut ToolRegistry,
    log: &mut ToolLog,
    limits: &RunLimits,
) -> Result<StepRecord, EngineError> {
    let state = config
        .state(state_id)
        .ok_or_else(|| EngineError::UnknownState(state_id.to_string()))?;
    if trajectory.steps.len() >= limits.max_steps {
        return Err(EngineError::StepCap);
    }
    let index = trajectory.steps.len();
    let context = prompt::render_context(trajectory, log, limits.context_steps, limits.context_chars);
    let mut messages = vec![
        Message::system(prompt::agent_system(state, limits.max_tool_calls)),
        Message::user(prompt::agent_user(&trajectory.query, &context)),
    ];
    let first = agent.chat(&ChatRequest::new(Role::Agent, messages.clone()))?;

    let mut requests = first.tool_calls();
    if requests.len() > limits.max_tool_calls {
        tracing::warn!("state {state_id} requested {} tool calls; keeping {}", requests.len(), limits.max_tool_calls);
        requests.truncate(limits.max_tool_calls);
    }

    let mut records = Vec::new();
    let mut results = Vec::new();
    for req in requests {
        let refusal = if !state.allowed_tools.contains(&req.tool) {
            Some(format!("refused: tool {:?} is not permitted in state {state_id}", req.tool))
        } else if config.tool_forbidden(state_id, &req.tool) {
            Some(format!("refused: tool {:?} in state {state_id} is forbidden by memory", req.tool))
        } else {
            None
        };
        if let Some(note) = refusal {
            tracing::warn!("{note}");
            results.push((req.tool.clone(), req.input.clone(), note.clone()));
            records.push(ToolCallRecord {
                tool: req.tool,
                input: req.input,
                output_hash: None,
                output_preview: note,
                refused: true,
                failed: false,
            });
            continue;
        }
        match tools.call(&req.tool, &req.input) {
            Ok(output) => {
                let hash = digest(&output);
                log.payloads.push(ToolPayload {
                    step: index,
                    tool: req.tool.clone(),
                    input: req.input.clone(),
                    hash: hash.clone(),
                    output: output.clone(),
                });
                results.push((
                    req.tool.clone(),
                    req.input.clone(),
                    prompt::truncate_chars(&output, limits.context_chars),
                ));
                records.push(ToolCallRecord {
                    tool: req.tool,
                    input: req.input,
                    output_hash: Some(hash),
                    output_preview: prompt::truncate_chars(&output, 200),
                    refused: false,
                    failed: false,
                });
            }
            Err(e) => {
                let note = format!("error: {e}");
                results.push((req.tool.clone(), req.input.clone(), note.clone()));
                records.push(ToolCallRecord {
                    tool: req.tool,
                    input: req.input,
                    output_hash: None,
                    output_preview: note,
                    refused: false,
                    failed: true,
                });
            }
        }
    }

    let output = if results.is_empty() {
        first.prose()
    } else {
        messages.push(Message::assistant(first.text.clone()));
        messages.push(Message::user(prompt::tool_results(&results)));
        agent.chat(&ChatRequest::new(Role::Agent, messages))?.prose()
    };

    let step = StepRecord {
        index,
        state_id: state_id.to_string(),
        agent_output: output,
        tool_calls: records,
        chosen_transition: None,
    };
    trajectory.steps.push(step.clone());
    *trajectory.visit_counts.entry(state_id.to_string()).or_insert(0) += 1;
    Ok(step)
}

/// Executes the machine from its initial state until a terminal state
/// runs, the step cap is hit, or a state exceeds the loop threshold.
pub fn run(
    config: &FsmConfig,
    query: &str,
    chat: &mut dyn ChatBackend,
    tools: &mut ToolRegistry,
    limits: &RunLimits,
) -> Trajectory {
    let mut log = ToolLog::default();
    run_logged(config, query, chat, tools, limits, &mut log)
}

pub fn run_logged(
    config: &FsmConfig,
    query: &str,
    chat: &mut dyn ChatBackend,
    tools: &mut ToolRegistry,
    limits: &RunLimits,
    log: &mut ToolLog,
) -> Trajectory {
    let mut trajectory = Trajectory::new(query);
    let mut current = config.initial_state.clone();
    let halt = |t: &mut Trajectory, reason: HaltReason, error: Option<String>| {
        t.halted_reason = reason;
        t.error = error;
    };
    loop {
        if trajectory.steps.len() >= limits.max_steps {
            halt(&mut trajectory, HaltReason::StepCap, None);
            break;
        }
        let step = match execute_state(config, &current, &mut trajectory, chat, tools, log, limits) {
            Ok(step) => step,
            Err(e) => {
                trajectory.backend_fault = matches!(e, EngineError::Backend(_));
                halt(&mut trajectory, HaltReason::Error, Some(e.to_string()));
                break;
            }
        };
        let is_terminal = config.state(&current).is_some_and(|s| s.is_terminal);
        if is_terminal {
            trajectory.final_answer = Some(step.agent_output);
            halt(&mut trajectory, HaltReason::Terminal, None);
            break;
        }
        if trajectory.visits(&current) > limits.loop_threshold {
            halt(&mut trajectory, HaltReason::LoopDetected, None);
            break;
        }
        match route(config, &current, &trajectory, chat, log, limits) {
            Ok(decision) => {
                if let Some(last) = trajectory.steps.last_mut() {
                    last.chosen_transition = Some(decision.transition_id);
                }
                current = decision.to_state;
            }
            Err(e) => {
                trajectory.backend_fault = matches!(e, RouteError::Backend(_));
                halt(&mut trajectory, HaltReason::Error, Some(e.to_string()));
                break;
            }
        }
    }
    trajectory
}

/// Visit counts recomputed from the steps.
pub fn recount(trajectory: &Trajectory) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for s in &trajectory.steps {
        *out.entry(s.state_id.clone()).or_insert(0) += 1;
    }
    out
}
