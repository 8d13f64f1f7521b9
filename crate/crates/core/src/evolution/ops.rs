//! The four atomic edits, their application, and their inverses.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::fsm::{
    validate_with_cap, ConditionSpec, FsmConfig, StateDef, TransitionRule, ValidationReport, ViolationCode,
    DEFAULT_MAX_STATES,
};

/// How a transition into a deleted state is rewired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Rewire {
    /// Keep the transition but point it at another state.
    Retarget { transition_id: String, to_state: String },
    /// Replace the transition (matched by `rule.id`) wholesale.
    Replace { rule: TransitionRule },
    Delete { transition_id: String },
}

impl Rewire {
    fn transition_id(&self) -> &str {
        match self {
            Rewire::Retarget { transition_id, .. } | Rewire::Delete { transition_id } => transition_id,
            Rewire::Replace { rule } => &rule.id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OpEdit {
    /// Inserts a state. An inbound rule whose id names an existing
    /// transition replaces it, which is how a state is spliced into an edge.
    AddState {
        state: StateDef,
        #[serde(default)]
        inbound: Vec<TransitionRule>,
        #[serde(default)]
        outbound: Vec<TransitionRule>,
    },
    /// Removes a state and its outgoing transitions. Inbound transitions not
    /// covered by `rewiring` are deleted.
    DeleteState {
        state_id: String,
        #[serde(default)]
        rewiring: Vec<Rewire>,
    },
    ModifyTransition {
        transition_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        to_state: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        condition: Option<ConditionSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        priority: Option<i64>,
    },
    ReviseInstruction { state_id: String, instruction: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OpKind {
    AddState,
    DeleteState,
    ModifyTransition,
    ReviseInstruction,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpKind::AddState => "ADD_STATE",
            OpKind::DeleteState => "DELETE_STATE",
            OpKind::ModifyTransition => "MODIFY_TRANSITION",
            OpKind::ReviseInstruction => "REVISE_INSTRUCTION",
        })
    }
}

impl OpEdit {
    pub fn kind(&self) -> OpKind {
        match self {
            OpEdit::AddState { .. } => OpKind::AddState,
            OpEdit::DeleteState { .. } => OpKind::DeleteState,
            OpEdit::ModifyTransition { .. } => OpKind::ModifyTransition,
            OpEdit::ReviseInstruction { .. } => OpKind::ReviseInstruction,
        }
    }

    /// The state or transition id the edit is about.
    pub fn target(&self) -> &str {
        match self {
            OpEdit::AddState { state, .. } => &state.id,
            OpEdit::DeleteState { state_id, .. } | OpEdit::ReviseInstruction { state_id, .. } => state_id,
            OpEdit::ModifyTransition { transition_id, .. } => transition_id,
        }
    }

    /// Flow edits change states or transitions; the skill edit changes
    /// only instruction text.
    pub fn is_flow(&self) -> bool {
        !matches!(self, OpEdit::ReviseInstruction { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicOp {
    #[serde(flatten)]
    pub edit: OpEdit,
    #[serde(default)]
    pub rationale: String,
}

impl AtomicOp {
    pub fn new(edit: OpEdit, rationale: impl Into<String>) -> Self {
        Self { edit, rationale: rationale.into() }
    }
}

impl fmt::Display for AtomicOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.edit.kind(), self.edit.target())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OpRejectCode {
    StateCap,
    DeleteInitial,
    DeleteLastTerminal,
    UnknownTarget,
    WouldOrphan,
    ForbiddenByMemory,
    DuplicateId,
    EmptyEdit,
    /// The edited machine failed validation for another reason.
    InvalidResult,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code:?}: {message}")]
pub struct OpRejected {
    pub code: OpRejectCode,
    pub message: String,
    pub report: Option<ValidationReport>,
}

fn reject(code: OpRejectCode, message: impl Into<String>) -> OpRejected {
    OpRejected { code, message: message.into(), report: None }
}

/// Applies `op` with the default state cap.
pub fn apply_op(config: &FsmConfig, op: &AtomicOp) -> Result<(FsmConfig, AtomicOp), OpRejected> {
    apply_op_with(config, op, DEFAULT_MAX_STATES)
}

pub fn apply_op_with(config: &FsmConfig, op: &AtomicOp, max_states: usize) -> Result<(FsmConfig, AtomicOp), OpRejected> {
    apply_inner(config, op, max_states, true)
}

/// Applies an inverse produced by [`apply_op`]. Memory constraints are not
/// consulted: restoring an ancestor is always allowed.
pub fn undo(config: &FsmConfig, inverse: &AtomicOp) -> Result<FsmConfig, OpRejected> {
    undo_with(config, inverse, DEFAULT_MAX_STATES)
}

pub fn undo_with(config: &FsmConfig, inverse: &AtomicOp, max_states: usize) -> Result<FsmConfig, OpRejected> {
    apply_inner(config, inverse, max_states, false).map(|(c, _)| c)
}

fn apply_inner(
    config: &FsmConfig,
    op: &AtomicOp,
    max_states: usize,
    check_memory: bool,
) -> Result<(FsmConfig, AtomicOp), OpRejected> {
    let mut next = config.clone();
    let mut created: Vec<(String, String)> = Vec::new();
    let inverse_edit = match &op.edit {
        OpEdit::AddState { state, inbound, outbound } => {
            add_state(&mut next, state, inbound, outbound, max_states, &mut created)?
        }
        OpEdit::DeleteState { state_id, rewiring } => delete_state(&mut next, state_id, rewiring, &mut created)?,
        OpEdit::ModifyTransition { transition_id, to_state, condition, priority } => modify_transition(
            &mut next,
            transition_id,
            to_state.as_deref(),
            condition.as_ref(),
            *priority,
            &mut created,
        )?,
        OpEdit::ReviseInstruction { state_id, instruction } => {
            let state = next
                .states
                .iter_mut()
                .find(|s| &s.id == state_id)
                .ok_or_else(|| reject(OpRejectCode::UnknownTarget, format!("no state {state_id}")))?;
            let old = std::mem::replace(&mut state.instruction, instruction.clone());
            OpEdit::ReviseInstruction { state_id: state_id.clone(), instruction: old }
        }
    };
    if check_memory {
        if let Some((from, to)) = created.iter().find(|(f, t)| config.edge_forbidden(f, t)) {
            return Err(reject(
                OpRejectCode::ForbiddenByMemory,
                format!("edge {from} -> {to} matches a forbidden pattern"),
            ));
        }
    }
    let report = validate_with_cap(&next, max_states);
    if !report.is_valid() {
        let orphaning = [
            ViolationCode::NonterminalDeadEnd,
            ViolationCode::UnreachableState,
            ViolationCode::NoTerminalReachable,
        ];
        let code = if report.codes().iter().all(|c| orphaning.contains(c)) {
            OpRejectCode::WouldOrphan
        } else if report.has(ViolationCode::StateCapExceeded) {
            OpRejectCode::StateCap
        } else {
            OpRejectCode::InvalidResult
        };
        return Err(OpRejected { code, message: format!("edit leaves an invalid machine: {report}"), report: Some(report) });
    }
    next.version = config.version + 1;
    let inverse = AtomicOp::new(inverse_edit, format!("undo {op}"));
    Ok((next, inverse))
}

fn add_state(
    next: &mut FsmConfig,
    state: &StateDef,
    inbound: &[TransitionRule],
    outbound: &[TransitionRule],
    max_states: usize,
    created: &mut Vec<(String, String)>,
) -> Result<OpEdit, OpRejected> {
    if next.states.len() >= max_states {
        return Err(reject(OpRejectCode::StateCap, format!("machine already has {} states", next.states.len())));
    }
    if state.id.is_empty() {
        return Err(reject(OpRejectCode::InvalidResult, "state id is empty"));
    }
    if next.state(&state.id).is_some() {
        return Err(reject(OpRejectCode::DuplicateId, format!("state {} already exists", state.id)));
    }
    let mut ids = BTreeSet::new();
    for t in inbound.iter().chain(outbound) {
        if !ids.insert(t.id.as_str()) {
            return Err(reject(OpRejectCode::DuplicateId, format!("transition id {} repeated", t.id)));
        }
    }
    for t in inbound {
        if t.to_state != state.id || t.from_state == state.id {
            return Err(reject(OpRejectCode::InvalidResult, format!("inbound transition {} must enter {} from another state", t.id, state.id)));
        }
        if next.state(&t.from_state).is_none() {
            return Err(reject(OpRejectCode::UnknownTarget, format!("no state {}", t.from_state)));
        }
    }
    for t in outbound {
        if t.from_state != state.id {
            return Err(reject(OpRejectCode::InvalidResult, format!("outbound transition {} must leave {}", t.id, state.id)));
        }
        if t.to_state != state.id && next.state(&t.to_state).is_none() {
            return Err(reject(OpRejectCode::UnknownTarget, format!("no state {}", t.to_state)));
        }
        if next.transition(&t.id).is_some() {
            return Err(reject(OpRejectCode::DuplicateId, format!("transition {} already exists", t.id)));
        }
    }

    let mut rewiring = Vec::new();
    next.states.push(state.clone());
    for t in inbound {
        created.push((t.from_state.clone(), t.to_state.clone()));
        match next.transitions.iter_mut().find(|x| x.id == t.id) {
            Some(slot) => {
                let original = std::mem::replace(slot, t.clone());
                rewiring.push(Rewire::Replace { rule: original });
            }
            None => {
                next.transitions.push(t.clone());
                rewiring.push(Rewire::Delete { transition_id: t.id.clone() });
            }
        }
    }
    for t in outbound {
        created.push((t.from_state.clone(), t.to_state.clone()));
        next.transitions.push(t.clone());
    }
    Ok(OpEdit::DeleteState { state_id: state.id.clone(), rewiring })
}

fn delete_state(
    next: &mut FsmConfig,
    state_id: &str,
    rewiring: &[Rewire],
    created: &mut Vec<(String, String)>,
) -> Result<OpEdit, OpRejected> {
    let state = next
        .state(state_id)
        .cloned()
        .ok_or_else(|| reject(OpRejectCode::UnknownTarget, format!("no state {state_id}")))?;
    if next.initial_state == state_id {
        return Err(reject(OpRejectCode::DeleteInitial, format!("{state_id} is the initial state")));
    }
    if state.is_terminal && next.states.iter().filter(|s| s.is_terminal).count() == 1 {
        return Err(reject(OpRejectCode::DeleteLastTerminal, format!("{state_id} is the only terminal state")));
    }
    let is_inbound = |t: &TransitionRule| t.to_state == state_id && t.from_state != state_id;
    let inbound: Vec<TransitionRule> = next.transitions.iter().filter(|t| is_inbound(t)).cloned().collect();
    let outbound: Vec<TransitionRule> =
        next.transitions.iter().filter(|t| t.from_state == state_id).cloned().collect();

    let mut covered = BTreeSet::new();
    for r in rewiring {
        let id = r.transition_id();
        if !inbound.iter().any(|t| t.id == id) {
            return Err(reject(OpRejectCode::UnknownTarget, format!("{id} is not a transition into {state_id}")));
        }
        if !covered.insert(id.to_string()) {
            return Err(reject(OpRejectCode::DuplicateId, format!("transition {id} rewired twice")));
        }
        let target = match r {
            Rewire::Retarget { to_state, .. } => Some(to_state.as_str()),
            Rewire::Replace { rule } => Some(rule.to_state.as_str()),
            Rewire::Delete { .. } => None,
        };
        if let Some(to) = target {
            if to == state_id || next.state(to).is_none() {
                return Err(reject(OpRejectCode::UnknownTarget, format!("cannot rewire {id} to {to}")));
            }
        }
        if let Rewire::Replace { rule } = r {
            if rule.from_state == state_id || next.state(&rule.from_state).is_none() {
                return Err(reject(OpRejectCode::UnknownTarget, format!("cannot rewire {id} from {}", rule.from_state)));
            }
        }
    }

    next.states.retain(|s| s.id != state_id);
    let mut kept = Vec::with_capacity(next.transitions.len());
    for t in std::mem::take(&mut next.transitions) {
        if t.from_state == state_id {
            continue;
        }
        if t.to_state != state_id {
            kept.push(t);
            continue;
        }
        match rewiring.iter().find(|r| r.transition_id() == t.id) {
            Some(Rewire::Retarget { to_state, .. }) => {
                created.push((t.from_state.clone(), to_state.clone()));
                kept.push(TransitionRule { to_state: to_state.clone(), ..t });
            }
            Some(Rewire::Replace { rule }) => {
                created.push((rule.from_state.clone(), rule.to_state.clone()));
                kept.push(rule.clone());
            }
            Some(Rewire::Delete { .. }) | None => {}
        }
    }
    next.transitions = kept;
    Ok(OpEdit::AddState { state, inbound, outbound })
}

fn modify_transition(
    next: &mut FsmConfig,
    transition_id: &str,
    to_state: Option<&str>,
    condition: Option<&ConditionSpec>,
    priority: Option<i64>,
    created: &mut Vec<(String, String)>,
) -> Result<OpEdit, OpRejected> {
    if to_state.is_none() && condition.is_none() && priority.is_none() {
        return Err(reject(OpRejectCode::EmptyEdit, format!("nothing to change on {transition_id}")));
    }
    if let Some(to) = to_state {
        if next.state(to).is_none() {
            return Err(reject(OpRejectCode::UnknownTarget, format!("no state {to}")));
        }
    }
    let t = next
        .transitions
        .iter_mut()
        .find(|t| t.id == transition_id)
        .ok_or_else(|| reject(OpRejectCode::UnknownTarget, format!("no transition {transition_id}")))?;
    let mut inverse = (None, None, None);
    if let Some(to) = to_state {
        if to != t.to_state {
            created.push((t.from_state.clone(), to.to_string()));
        }
        inverse.0 = Some(std::mem::replace(&mut t.to_state, to.to_string()));
    }
    if let Some(c) = condition {
        inverse.1 = Some(std::mem::replace(&mut t.condition, c.clone()));
    }
    if let Some(p) = priority {
        inverse.2 = Some(std::mem::replace(&mut t.priority, p));
    }
    Ok(OpEdit::ModifyTransition {
        transition_id: transition_id.to_string(),
        to_state: inverse.0,
        condition: inverse.1,
        priority: inverse.2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fsm::{validate_config, ForbiddenPattern};
    use serde_json::json;

    fn case1() -> FsmConfig {
        FsmConfig {
            version: 1,
            initial_state: "search".into(),
            states: vec![
                StateDef::new("search", "Search", "Search the web.").with_tools(["search"]),
                StateDef::new("browse", "Browse", "Read the best source.").with_tools(["browse"]),
                StateDef::new("synthesize", "Synthesize", "Answer.").terminal(),
            ],
            transitions: vec![
                TransitionRule::new(
                    "search_to_browse",
                    "search",
                    "browse",
                    0,
                    ConditionSpec::predicate("evidence_count_at_least", vec![json!(1)]),
                ),
                TransitionRule::new("search_retry", "search", "search", 1, ConditionSpec::always()),
                TransitionRule::new(
                    "browse_to_synthesize",
                    "browse",
                    "synthesize",
                    0,
                    ConditionSpec::predicate("last_output_contains", vec![json!("EVIDENCE_SUFFICIENT")]),
                ),
                TransitionRule::new("browse_to_search", "browse", "search", 1, ConditionSpec::always()),
            ],
            negative_constraints: vec![],
            extra: Default::default(),
        }
    }

    fn add_verifier() -> AtomicOp {
        AtomicOp::new(
            OpEdit::AddState {
                state: StateDef::new("verifier", "Verifier", "Check dates and figures."),
                inbound: vec![TransitionRule::new(
                    "browse_to_synthesize",
                    "browse",
                    "verifier",
                    0,
                    ConditionSpec::always(),
                )],
                outbound: vec![
                    TransitionRule::new(
                        "verifier_to_synthesize",
                        "verifier",
                        "synthesize",
                        0,
                        ConditionSpec::predicate("last_output_contains", vec![json!("VERIFIED")]),
                    ),
                    TransitionRule::new("verifier_to_search", "verifier", "search", 1, ConditionSpec::always()),
                ],
            },
            "loop without date-specific evidence",
        )
    }

    #[test]
    fn add_state_splices_and_undoes() {
        let c = case1();
        let (next, inverse) = apply_op(&c, &add_verifier()).unwrap();
        assert_eq!(next.version, 2);
        assert_eq!(next.states.len(), 4);
        assert!(validate_config(&next).is_valid());
        assert_eq!(next.transition("browse_to_synthesize").unwrap().to_state, "verifier");
        assert_eq!(next.instructions(), {
            let mut m = c.instructions();
            m.insert("verifier".into(), "Check dates and figures.".into());
            m
        });
        let back = undo(&next, &inverse).unwrap();
        assert!(back.structurally_eq(&c));
        assert_eq!(back.version, 3);
    }

    #[test]
    fn delete_rejections() {
        let c = case1();
        let del = |id: &str| AtomicOp::new(OpEdit::DeleteState { state_id: id.into(), rewiring: vec![] }, "");
        assert_eq!(apply_op(&c, &del("search")).unwrap_err().code, OpRejectCode::DeleteInitial);
        assert_eq!(apply_op(&c, &del("synthesize")).unwrap_err().code, OpRejectCode::DeleteLastTerminal);
        assert_eq!(apply_op(&c, &del("nope")).unwrap_err().code, OpRejectCode::UnknownTarget);
        // Browse is the only way to the answer.
        assert_eq!(apply_op(&c, &del("browse")).unwrap_err().code, OpRejectCode::WouldOrphan);
    }

    #[test]
    fn delete_with_retarget_round_trips() {
        let c = case1();
        let op = AtomicOp::new(
            OpEdit::DeleteState {
                state_id: "browse".into(),
                rewiring: vec![Rewire::Retarget { transition_id: "search_to_browse".into(), to_state: "synthesize".into() }],
            },
            "skip reading",
        );
        let (next, inverse) = apply_op(&c, &op).unwrap();
        assert_eq!(next.states.len(), 2);
        assert_eq!(next.transition("search_to_browse").unwrap().to_state, "synthesize");
        assert!(next.transition("browse_to_search").is_none());
        assert!(undo(&next, &inverse).unwrap().structurally_eq(&c));
    }

    #[test]
    fn state_cap() {
        let mut c = case1();
        for i in 0..7 {
            c.states.push(StateDef::new(format!("x{i}"), "X", "x"));
            c.transitions.push(TransitionRule::new(format!("to_x{i}"), "search", format!("x{i}"), 10 + i, ConditionSpec::always()));
            c.transitions.push(TransitionRule::new(format!("x{i}_out"), format!("x{i}"), "synthesize", 0, ConditionSpec::always()));
        }
        assert_eq!(c.states.len(), 10);
        assert!(validate_config(&c).is_valid());
        assert_eq!(apply_op(&c, &add_verifier()).unwrap_err().code, OpRejectCode::StateCap);
    }

    #[test]
    fn revise_touches_only_one_instruction() {
        let c = case1();
        let text = "Read the best source. Do not summarize numerical data.";
        let op = AtomicOp::new(OpEdit::ReviseInstruction { state_id: "browse".into(), instruction: text.into() }, "");
        let (next, inverse) = apply_op(&c, &op).unwrap();
        assert_eq!(next.topology(), c.topology());
        let diff: Vec<_> = next.states.iter().zip(&c.states).filter(|(a, b)| a.instruction != b.instruction).collect();
        assert_eq!(diff.len(), 1);
        assert_eq!(diff[0].0.instruction, text);
        assert_eq!(undo(&next, &inverse).unwrap().state("browse").unwrap().instruction, "Read the best source.");
    }

    #[test]
    fn modify_transition_and_memory() {
        let mut c = case1();
        let op = AtomicOp::new(
            OpEdit::ModifyTransition {
                transition_id: "browse_to_search".into(),
                to_state: Some("synthesize".into()),
                condition: None,
                priority: Some(5),
            },
            "",
        );
        let (next, inverse) = apply_op(&c, &op).unwrap();
        assert_eq!(next.transition("browse_to_search").unwrap().priority, 5);
        assert!(undo(&next, &inverse).unwrap().structurally_eq(&c));

        c.negative_constraints.push(ForbiddenPattern::edge("browse", "synthesize", "bad"));
        assert_eq!(apply_op(&c, &op).unwrap_err().code, OpRejectCode::ForbiddenByMemory);
        let empty = AtomicOp::new(
            OpEdit::ModifyTransition { transition_id: "browse_to_search".into(), to_state: None, condition: None, priority: None },
            "",
        );
        assert_eq!(apply_op(&c, &empty).unwrap_err().code, OpRejectCode::EmptyEdit);
    }

    #[test]
    fn op_json_shape() {
        let op = AtomicOp::new(OpEdit::ReviseInstruction { state_id: "browse".into(), instruction: "x".into() }, "why");
        let v = serde_json::to_value(&op).unwrap();
        assert_eq!(v, json!({"op": "REVISE_INSTRUCTION", "state_id": "browse", "instruction": "x", "rationale": "why"}));
        let back: AtomicOp = serde_json::from_value(v).unwrap();
        assert_eq!(back, op);
        let add: AtomicOp = serde_json::from_str(&serde_json::to_string(&add_verifier()).unwrap()).unwrap();
        assert_eq!(add, add_verifier());
        assert!(serde_json::from_value::<AtomicOp>(json!({"op": "REWRITE_EVERYTHING"})).is_err());
    }
}
