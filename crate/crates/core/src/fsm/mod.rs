//! The machine: states carrying instructions, prioritized transitions, and
//! the trajectory a run leaves behind.

mod config_io;
mod engine;
pub mod predicates;
mod prompt;
mod validate;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use config_io::{deserialize_config, serialize_config, SchemaError};
pub use engine::{
    execute_state, recount, route, run, run_logged, EngineError, RouteDecision, RouteError, RunLimits, ToolLog,
    ToolPayload,
};
pub(crate) use engine::digest;
pub use validate::{validate_config, validate_with_cap, ValidationReport, Violation, ViolationCode};

/// Default cap on the number of states in a machine.
pub const DEFAULT_MAX_STATES: usize = 10;

/// Unknown JSON members, kept so documents survive a round trip untouched.
pub type Extra = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDef {
    pub id: String,
    pub name: String,
    pub instruction: String,
    #[serde(default)]
    pub allowed_tools: BTreeSet<String>,
    #[serde(default)]
    pub is_terminal: bool,
    #[serde(flatten)]
    pub extra: Extra,
}

impl StateDef {
    pub fn new(id: impl Into<String>, name: impl Into<String>, instruction: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            instruction: instruction.into(),
            allowed_tools: BTreeSet::new(),
            is_terminal: false,
            extra: Extra::new(),
        }
    }

    pub fn with_tools<I, S>(mut self, tools: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.allowed_tools = tools.into_iter().map(Into::into).collect();
        self
    }

    pub fn terminal(mut self) -> Self {
        self.is_terminal = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionKind {
    Always,
    Predicate,
    Router,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub kind: ConditionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub args: Option<Vec<Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance: Option<String>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl ConditionSpec {
    pub fn always() -> Self {
        Self {
            kind: ConditionKind::Always,
            predicate: None,
            args: None,
            guidance: None,
            extra: Extra::new(),
        }
    }

    pub fn predicate(name: impl Into<String>, args: Vec<Value>) -> Self {
        Self {
            kind: ConditionKind::Predicate,
            predicate: Some(name.into()),
            args: Some(args),
            guidance: None,
            extra: Extra::new(),
        }
    }

    pub fn router(guidance: impl Into<String>) -> Self {
        Self {
            kind: ConditionKind::Router,
            predicate: None,
            args: None,
            guidance: Some(guidance.into()),
            extra: Extra::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRule {
    pub id: String,
    #[serde(rename = "from")]
    pub from_state: String,
    #[serde(rename = "to")]
    pub to_state: String,
    pub priority: i64,
    pub condition: ConditionSpec,
    #[serde(flatten)]
    pub extra: Extra,
}

impl TransitionRule {
    pub fn new(
        id: impl Into<String>,
        from: impl Into<String>,
        to: impl Into<String>,
        priority: i64,
        condition: ConditionSpec,
    ) -> Self {
        Self {
            id: id.into(),
            from_state: from.into(),
            to_state: to.into(),
            priority,
            condition,
            extra: Extra::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForbiddenRule {
    TransitionEdge { from: String, to: String },
    ToolInState { state: String, tool: String },
}

/// A negative constraint distilled from a failed episode. The ids it names
/// need not exist in the machine it is attached to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForbiddenPattern {
    #[serde(flatten)]
    pub rule: ForbiddenRule,
    #[serde(default)]
    pub rationale: String,
}

impl ForbiddenPattern {
    pub fn edge(from: impl Into<String>, to: impl Into<String>, rationale: impl Into<String>) -> Self {
        Self {
            rule: ForbiddenRule::TransitionEdge { from: from.into(), to: to.into() },
            rationale: rationale.into(),
        }
    }

    pub fn tool(state: impl Into<String>, tool: impl Into<String>, rationale: impl Into<String>) -> Self {
        Self {
            rule: ForbiddenRule::ToolInState { state: state.into(), tool: tool.into() },
            rationale: rationale.into(),
        }
    }

    pub fn blocks_edge(&self, from: &str, to: &str) -> bool {
        matches!(&self.rule, ForbiddenRule::TransitionEdge { from: f, to: t } if f == from && t == to)
    }

    pub fn blocks_tool(&self, state: &str, tool: &str) -> bool {
        matches!(&self.rule, ForbiddenRule::ToolInState { state: s, tool: t } if s == state && t == tool)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsmConfig {
    pub version: u64,
    pub initial_state: String,
    pub states: Vec<StateDef>,
    pub transitions: Vec<TransitionRule>,
    #[serde(default)]
    pub negative_constraints: Vec<ForbiddenPattern>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl FsmConfig {
    pub fn state(&self, id: &str) -> Option<&StateDef> {
        self.states.iter().find(|s| s.id == id)
    }

    pub fn transition(&self, id: &str) -> Option<&TransitionRule> {
        self.transitions.iter().find(|t| t.id == id)
    }

    /// Outgoing transitions of `from`, in firing order: priority, then id.
    pub fn outgoing(&self, from: &str) -> Vec<&TransitionRule> {
        let mut out: Vec<_> = self.transitions.iter().filter(|t| t.from_state == from).collect();
        out.sort_by(|a, b| a.priority.cmp(&b.priority).then_with(|| a.id.cmp(&b.id)));
        out
    }

    pub fn edge_forbidden(&self, from: &str, to: &str) -> bool {
        self.negative_constraints.iter().any(|p| p.blocks_edge(from, to))
    }

    pub fn tool_forbidden(&self, state: &str, tool: &str) -> bool {
        self.negative_constraints.iter().any(|p| p.blocks_tool(state, tool))
    }

    /// Flow projection: everything except instruction texts and version.
    pub fn topology(&self) -> Topology {
        let mut states: Vec<_> = self
            .states
            .iter()
            .map(|s| (s.id.clone(), s.name.clone(), s.allowed_tools.clone(), s.is_terminal))
            .collect();
        states.sort();
        let mut transitions: Vec<_> = self.transitions.clone();
        transitions.sort_by(|a, b| a.id.cmp(&b.id));
        Topology {
            initial_state: self.initial_state.clone(),
            states,
            transitions,
        }
    }

    /// Skill projection: state id to instruction text.
    pub fn instructions(&self) -> BTreeMap<String, String> {
        self.states.iter().map(|s| (s.id.clone(), s.instruction.clone())).collect()
    }

    /// Equality that ignores `version` and the order of states and transitions.
    pub fn structurally_eq(&self, other: &FsmConfig) -> bool {
        self.topology() == other.topology()
            && self.instructions() == other.instructions()
            && self.negative_constraints == other.negative_constraints
            && self.extra == other.extra
            && state_extras(self) == state_extras(other)
    }
}

fn state_extras(c: &FsmConfig) -> BTreeMap<&str, &Extra> {
    c.states.iter().map(|s| (s.id.as_str(), &s.extra)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Topology {
    pub initial_state: String,
    pub states: Vec<(String, String, BTreeSet<String>, bool)>,
    pub transitions: Vec<TransitionRule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HaltReason {
    Terminal,
    StepCap,
    LoopDetected,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    pub tool: String,
    pub input: String,
    /// `sha256:<16 hex>` of the full payload; absent when the call did not run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_hash: Option<String>,
    /// First 200 characters of the payload, or the refusal / error note.
    pub output_preview: String,
    #[serde(default)]
    pub refused: bool,
    #[serde(default)]
    pub failed: bool,
}

impl ToolCallRecord {
    pub fn succeeded(&self) -> bool {
        !self.refused && !self.failed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub state_id: String,
    pub agent_output: String,
    #[serde(default)]
    pub tool_calls: Vec<ToolCallRecord>,
    #[serde(default)]
    pub chosen_transition: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub query: String,
    pub steps: Vec<StepRecord>,
    pub visit_counts: BTreeMap<String, usize>,
    pub final_answer: Option<String>,
    pub halted_reason: HaltReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Set when the ERROR halt came from a chat backend fault rather than
    /// from the machine itself (e.g. no transition fired).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub backend_fault: bool,
}

impl Trajectory {
    pub fn new(query: impl Into<String>) -> Self {
        Self {
            query: query.into(),
            steps: Vec::new(),
            visit_counts: BTreeMap::new(),
            final_answer: None,
            halted_reason: HaltReason::StepCap,
            error: None,
            backend_fault: false,
        }
    }

    pub fn state_sequence(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.state_id.as_str()).collect()
    }

    pub fn visits(&self, state: &str) -> usize {
        self.visit_counts.get(state).copied().unwrap_or(0)
    }

    /// Tool calls that ran and returned a payload.
    pub fn evidence_count(&self) -> usize {
        self.steps
            .iter()
            .flat_map(|s| &s.tool_calls)
            .filter(|c| c.succeeded())
            .count()
    }

    /// Compact rendering of the path and the tool activity, for prompts.
    pub fn digest(&self) -> String {
        let mut out = format!(
            "path: {}\nhalted: {:?}\n",
            self.state_sequence().join(" -> "),
            self.halted_reason
        );
        for step in &self.steps {
            for call in &step.tool_calls {
                let status = if call.refused {
                    "refused"
                } else if call.failed {
                    "failed"
                } else {
                    "ok"
                };
                out.push_str(&format!(
                    "[{}] {} {}({:?}) {}: {}\n",
                    step.index,
                    step.state_id,
                    call.tool,
                    call.input,
                    status,
                    prompt::first_line(&call.output_preview)
                ));
            }
        }
        out
    }
}

pub(crate) use prompt::truncate_chars;
