//! Asking the proposer backend for atomic ops.
//!
//! The reply must contain a fenced `json` block holding an array of op
//! objects. Elements that do not parse as an [`AtomicOp`] are dropped; the
//! block itself is never repaired.

use serde_json::Value;

use super::ops::AtomicOp;
use crate::backends::{fenced_blocks, BackendError, ChatBackend, ChatRequest, Message, Role};
use crate::critic::Verdict;
use crate::fsm::{ConditionKind, FsmConfig, ForbiddenRule, Trajectory};
use crate::reflection::{ExperienceRecord, Outcome};

pub const MAX_OPS_PER_PROPOSAL: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProposeError {
    #[error("the verdict passed; nothing to propose")]
    VerdictPassed,
    #[error("no valid op in proposal: {0}")]
    NoValidProposal(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// One-screen rendering of a machine for prompts.
pub fn render_config(config: &FsmConfig) -> String {
    let mut s = format!("initial: {}\nstates:\n", config.initial_state);
    for st in &config.states {
        let tools: Vec<&str> = st.allowed_tools.iter().map(String::as_str).collect();
        s.push_str(&format!(
            "- {} \"{}\" tools=[{}]{}\n  instruction: {}\n",
            st.id,
            st.name,
            tools.join(","),
            if st.is_terminal { " terminal" } else { "" },
            st.instruction.replace('\n', " ")
        ));
    }
    s.push_str("transitions:\n");
    let mut ts: Vec<_> = config.transitions.iter().collect();
    ts.sort_by(|a, b| (&a.from_state, a.priority, &a.id).cmp(&(&b.from_state, b.priority, &b.id)));
    for t in ts {
        let cond = match t.condition.kind {
            ConditionKind::Always => "always".to_string(),
            ConditionKind::Predicate => {
                let args: Vec<String> = t
                    .condition
                    .args
                    .iter()
                    .flatten()
                    .map(|a| a.to_string())
                    .collect();
                format!("{}({})", t.condition.predicate.as_deref().unwrap_or("?"), args.join(", "))
            }
            ConditionKind::Router => format!("router {:?}", t.condition.guidance.as_deref().unwrap_or("")),
        };
        s.push_str(&format!("- {}: {} -> {} p{} {}\n", t.id, t.from_state, t.to_state, t.priority, cond));
    }
    s
}

fn proposer_system() -> String {
    format!(
        "You repair a finite-state research workflow after a failed run. You may only use these atomic ops:\n\
         - ADD_STATE {{\"op\":\"ADD_STATE\",\"state\":{{\"id\",\"name\",\"instruction\",\"allowed_tools\":[],\"is_terminal\":false}},\
         \"inbound\":[transition],\"outbound\":[transition]}} (an inbound transition reusing an existing id replaces that transition)\n\
         - DELETE_STATE {{\"op\":\"DELETE_STATE\",\"state_id\",\"rewiring\":[{{\"action\":\"retarget\",\"transition_id\",\"to_state\"}}|{{\"action\":\"delete\",\"transition_id\"}}]}}\n\
         - MODIFY_TRANSITION {{\"op\":\"MODIFY_TRANSITION\",\"transition_id\",\"to_state\"?,\"condition\"?,\"priority\"?}}\n\
         - REVISE_INSTRUCTION {{\"op\":\"REVISE_INSTRUCTION\",\"state_id\",\"instruction\"}}\n\
         A transition is {{\"id\",\"from\",\"to\",\"priority\",\"condition\":{{\"kind\":\"always\"|\"predicate\"|\"router\",\"predicate\"?,\"args\"?,\"guidance\"?}}}}.\n\
         Every op carries a \"rationale\". Reply with a fenced json block holding an array of 1 to {MAX_OPS_PER_PROPOSAL} ops.\n"
    )
}

fn proposer_user(
    verdict: &Verdict,
    config: &FsmConfig,
    trajectory: &Trajectory,
    retrieved: &[ExperienceRecord],
    feedback: Option<&str>,
) -> String {
    let mut s = String::from("## Failure modes\n");
    for tag in &verdict.failure_modes {
        s.push_str(&format!("- {}: {}\n", tag.code.label(), tag.detail));
    }
    if !verdict.mechanical_flags.is_empty() {
        let flags: Vec<String> = verdict.mechanical_flags.iter().map(|f| format!("{f:?}")).collect();
        s.push_str(&format!("mechanical: {}\n", flags.join(", ")));
    }
    if !verdict.rationale.is_empty() {
        s.push_str(&format!("critic: {}\n", verdict.rationale));
    }
    s.push_str("## Current machine\n");
    s.push_str(&render_config(config));
    s.push_str("## Trajectory\n");
    s.push_str(&trajectory.digest());
    if !retrieved.is_empty() {
        s.push_str("## Prior experience\n");
        for r in retrieved {
            let tag = match r.outcome {
                Outcome::Success => "success",
                Outcome::Failure => "failure",
            };
            s.push_str(&format!("- ({tag}) {}\n", r.rationale.replace('\n', " ")));
        }
    }
    if !config.negative_constraints.is_empty() {
        s.push_str("## Forbidden (do not recreate)\n");
        for p in &config.negative_constraints {
            match &p.rule {
                ForbiddenRule::TransitionEdge { from, to } => s.push_str(&format!("- edge {from} -> {to}: {}\n", p.rationale)),
                ForbiddenRule::ToolInState { state, tool } => s.push_str(&format!("- tool {tool} in {state}: {}\n", p.rationale)),
            }
        }
    }
    if let Some(f) = feedback {
        s.push_str("## Previous proposal rejected\n");
        s.push_str(f);
        s.push('\n');
    }
    s
}

/// Strict parse of a proposer reply into at most [`MAX_OPS_PER_PROPOSAL`] ops.
pub fn parse_ops(reply: &str) -> Result<Vec<AtomicOp>, String> {
    let block = fenced_blocks(reply, "json")
        .into_iter()
        .next()
        .ok_or_else(|| "reply has no fenced json block".to_string())?;
    let items = match serde_json::from_str::<Value>(block.trim()).map_err(|e| e.to_string())? {
        Value::Array(items) => items,
        obj @ Value::Object(_) => vec![obj],
        other => return Err(format!("expected an array of ops, got {other}")),
    };
    let mut ops = Vec::new();
    for (i, item) in items.into_iter().enumerate() {
        match serde_json::from_value::<AtomicOp>(item) {
            Ok(op) => ops.push(op),
            Err(e) => tracing::warn!("dropping proposed op {i}: {e}"),
        }
    }
    if ops.len() > MAX_OPS_PER_PROPOSAL {
        tracing::warn!("proposal had {} ops; keeping the first {MAX_OPS_PER_PROPOSAL}", ops.len());
        ops.truncate(MAX_OPS_PER_PROPOSAL);
    }
    if ops.is_empty() {
        return Err("no element parsed as an atomic op".into());
    }
    Ok(ops)
}

pub fn propose_ops(
    verdict: &Verdict,
    config: &FsmConfig,
    trajectory: &Trajectory,
    retrieved: &[ExperienceRecord],
    proposer: &mut dyn ChatBackend,
) -> Result<Vec<AtomicOp>, ProposeError> {
    propose_ops_with_feedback(verdict, config, trajectory, retrieved, proposer, None)
}

/// As [`propose_ops`], telling the proposer why its last attempt failed.
pub fn propose_ops_with_feedback(
    verdict: &Verdict,
    config: &FsmConfig,
    trajectory: &Trajectory,
    retrieved: &[ExperienceRecord],
    proposer: &mut dyn ChatBackend,
    feedback: Option<&str>,
) -> Result<Vec<AtomicOp>, ProposeError> {
    if verdict.passed {
        return Err(ProposeError::VerdictPassed);
    }
    let request = ChatRequest::new(
        Role::Proposer,
        vec![
            Message::system(proposer_system()),
            Message::user(proposer_user(verdict, config, trajectory, retrieved, feedback)),
        ],
    );
    let reply = proposer.chat(&request)?;
    parse_ops(&reply.text).map_err(ProposeError::NoValidProposal)
}
