use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::predicates;
use super::{ConditionKind, FsmConfig, DEFAULT_MAX_STATES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    EmptyId,
    DupStateId,
    DupTransitionId,
    DanglingTransition,
    NoInitial,
    UnreachableState,
    NonterminalDeadEnd,
    StateCapExceeded,
    DupPriority,
    UnknownPredicate,
    MalformedCondition,
    NoTerminalReachable,
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        write!(f, "{}", s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub subject: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    pub fn codes(&self) -> BTreeSet<ViolationCode> {
        self.violations.iter().map(|v| v.code).collect()
    }

    fn push(&mut self, code: ViolationCode, subject: impl Into<String>, detail: impl Into<String>) {
        self.violations.push(Violation {
            code,
            subject: subject.into(),
            detail: detail.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for v in &self.violations {
            writeln!(f, "{} [{}]: {}", v.code, v.subject, v.detail)?;
        }
        Ok(())
    }
}

pub fn validate_config(config: &FsmConfig) -> ValidationReport {
    validate_with_cap(config, DEFAULT_MAX_STATES)
}

/// Checks well-formedness. Violations are data: an empty report means valid.
pub fn validate_with_cap(config: &FsmConfig, max_states: usize) -> ValidationReport {
    let mut report = ValidationReport::default();

    if config.states.len() > max_states {
        report.push(
            ViolationCode::StateCapExceeded,
            "states",
            format!("{} states exceed the cap of {max_states}", config.states.len()),
        );
    }

    let mut state_ids = BTreeSet::new();
    for s in &config.states {
        if s.id.trim().is_empty() {
            report.push(ViolationCode::EmptyId, "state", "state id is empty");
        } else if !state_ids.insert(s.id.as_str()) {
            report.push(ViolationCode::DupStateId, &s.id, "state id appears more than once");
        }
    }

    let mut transition_ids = BTreeSet::new();
    let mut priorities: BTreeMap<(&str, i64), &str> = BTreeMap::new();
    for t in &config.transitions {
        if t.id.trim().is_empty() {
            report.push(ViolationCode::EmptyId, "transition", "transition id is empty");
        } else if !transition_ids.insert(t.id.as_str()) {
            report.push(ViolationCode::DupTransitionId, &t.id, "transition id appears more than once");
        }
        for end in [&t.from_state, &t.to_state] {
            if !state_ids.contains(end.as_str()) {
                report.push(
                    ViolationCode::DanglingTransition,
                    &t.id,
                    format!("references unknown state {end:?}"),
                );
            }
        }
        if let Some(other) = priorities.insert((t.from_state.as_str(), t.priority), t.id.as_str()) {
            report.push(
                ViolationCode::DupPriority,
                &t.id,
                format!("priority {} already used by {other} from {}", t.priority, t.from_state),
            );
        }
        match t.condition.kind {
            ConditionKind::Predicate => match t.condition.predicate.as_deref() {
                None => report.push(
                    ViolationCode::MalformedCondition,
                    &t.id,
                    "predicate condition without a predicate name",
                ),
                Some(name) => {
                    if let Err(e) = predicates::check(name, t.condition.args.as_deref().unwrap_or(&[])) {
                        report.push(ViolationCode::UnknownPredicate, &t.id, e);
                    }
                }
            },
            ConditionKind::Always | ConditionKind::Router => {}
        }
    }

    let initial_ok = state_ids.contains(config.initial_state.as_str());
    if !initial_ok {
        report.push(
            ViolationCode::NoInitial,
            "initial_state",
            format!("initial state {:?} is not a defined state", config.initial_state),
        );
    }

    for s in &config.states {
        if !s.is_terminal && !config.transitions.iter().any(|t| t.from_state == s.id) {
            report.push(
                ViolationCode::NonterminalDeadEnd,
                &s.id,
                "non-terminal state has no outgoing transition",
            );
        }
    }

    if initial_ok {
        let reachable = reachable_from(config, &config.initial_state);
        for s in &config.states {
            if !reachable.contains(s.id.as_str()) {
                report.push(
                    ViolationCode::UnreachableState,
                    &s.id,
                    "not reachable from the initial state",
                );
            }
        }
        let terminal_reachable = config
            .states
            .iter()
            .any(|s| s.is_terminal && reachable.contains(s.id.as_str()));
        if !terminal_reachable {
            report.push(
                ViolationCode::NoTerminalReachable,
                &config.initial_state,
                "no terminal state is reachable from the initial state",
            );
        }
    }

    report
}

fn reachable_from<'a>(config: &'a FsmConfig, start: &'a str) -> BTreeSet<&'a str> {
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(cur) = queue.pop_front() {
        for t in config.transitions.iter().filter(|t| t.from_state == cur) {
            if seen.insert(t.to_state.as_str()) {
                queue.push_back(t.to_state.as_str());
            }
        }
    }
    seen
}
