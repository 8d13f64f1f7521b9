//! Output critic: mechanical checks on the trajectory, then one backend
//! call judging the final answer against the query.
//!
//! The critic never sees a gold answer. It gets the query, the final answer
//! and the trajectory digest (state path plus tool-call summaries).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backends::{fenced_blocks, BackendError, ChatBackend, ChatRequest, Message, Role};
use crate::fsm::{HaltReason, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailureCode {
    QuantEvidenceMissing,
    LogicalInconsistency,
    Hallucination,
    IncompleteReasoning,
    Loop,
    SourceQuality,
}

impl FailureCode {
    pub const ALL: [FailureCode; 6] = [
        FailureCode::QuantEvidenceMissing,
        FailureCode::LogicalInconsistency,
        FailureCode::Hallucination,
        FailureCode::IncompleteReasoning,
        FailureCode::Loop,
        FailureCode::SourceQuality,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FailureCode::QuantEvidenceMissing => "QUANT_EVIDENCE_MISSING",
            FailureCode::LogicalInconsistency => "LOGICAL_INCONSISTENCY",
            FailureCode::Hallucination => "HALLUCINATION",
            FailureCode::IncompleteReasoning => "INCOMPLETE_REASONING",
            FailureCode::Loop => "LOOP",
            FailureCode::SourceQuality => "SOURCE_QUALITY",
        }
    }

    pub fn parse(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.label().eq_ignore_ascii_case(label.trim()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureTag {
    pub code: FailureCode,
    #[serde(default)]
    pub detail: String,
}

impl FailureTag {
    pub fn new(code: FailureCode, detail: impl Into<String>) -> Self {
        Self { code, detail: detail.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MechanicalFlag {
    LoopDetected,
    StepCap,
    EmptyAnswer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    #[serde(default)]
    pub failure_modes: Vec<FailureTag>,
    #[serde(default)]
    pub rationale: String,
    #[serde(default)]
    pub mechanical_flags: BTreeSet<MechanicalFlag>,
}

impl Verdict {
    pub fn pass(rationale: impl Into<String>) -> Self {
        Self {
            passed: true,
            failure_modes: Vec::new(),
            rationale: rationale.into(),
            mechanical_flags: BTreeSet::new(),
        }
    }

    pub fn has(&self, code: FailureCode) -> bool {
        self.failure_modes.iter().any(|t| t.code == code)
    }
}

/// Flags derivable from the trajectory alone, with the tags they imply.
pub fn mechanical_checks(trajectory: &Trajectory) -> (BTreeSet<MechanicalFlag>, Vec<FailureTag>) {
    let mut flags = BTreeSet::new();
    let mut tags = Vec::new();
    match trajectory.halted_reason {
        HaltReason::LoopDetected => {
            flags.insert(MechanicalFlag::LoopDetected);
            let state = trajectory.steps.last().map(|s| s.state_id.as_str()).unwrap_or("?");
            tags.push(FailureTag::new(
                FailureCode::Loop,
                format!("state {state} exceeded its visit threshold"),
            ));
        }
        HaltReason::StepCap => {
            flags.insert(MechanicalFlag::StepCap);
            tags.push(FailureTag::new(
                FailureCode::IncompleteReasoning,
                format!("step cap reached after {} steps", trajectory.steps.len()),
            ));
        }
        HaltReason::Terminal | HaltReason::Error => {}
    }
    let empty = trajectory.final_answer.as_deref().is_none_or(|a| a.trim().is_empty());
    if empty {
        flags.insert(MechanicalFlag::EmptyAnswer);
        let detail = match &trajectory.error {
            Some(e) => format!("no final answer: {e}"),
            None => "no final answer".to_string(),
        };
        tags.push(FailureTag::new(FailureCode::IncompleteReasoning, detail));
    }
    (flags, tags)
}

fn critic_system() -> String {
    let codes: Vec<&str> = FailureCode::ALL.iter().map(|c| c.label()).collect();
    format!(
        "You are the critic of a research workflow. Judge whether the final answer satisfies the query, \
         using only the query, the answer and the evidence digest.\n\
         Reply with a JSON object: {{\"passed\": bool, \"failure_modes\": [{{\"code\": str, \"detail\": str}}], \"rationale\": str}}.\n\
         Allowed codes: {}.\n",
        codes.join(", ")
    )
}

fn critic_user(query: &str, trajectory: &Trajectory) -> String {
    format!(
        "Query: {query}\n## Final answer\n{}\n## Evidence digest\n{}",
        trajectory.final_answer.as_deref().unwrap_or(""),
        trajectory.digest()
    )
}

#[derive(Deserialize)]
struct RawVerdict {
    passed: bool,
    #[serde(default)]
    failure_modes: Vec<RawTag>,
    #[serde(default)]
    rationale: String,
}

#[derive(Deserialize)]
struct RawTag {
    code: String,
    #[serde(default)]
    detail: String,
}

/// Parses a critic reply. A bare reply starting with `PASS` is accepted as
/// a pass; otherwise the reply must carry a JSON verdict object.
pub fn parse_verdict(reply: &str) -> Result<Verdict, String> {
    let trimmed = reply.trim();
    if trimmed.len() >= 4 && trimmed[..4].eq_ignore_ascii_case("pass") && !trimmed.contains('{') {
        return Ok(Verdict::pass(trimmed[4..].trim_start_matches([':', ' ', '-']).trim()));
    }
    let body = fenced_blocks(trimmed, "json")
        .into_iter()
        .next()
        .map(str::to_string)
        .or_else(|| {
            let start = trimmed.find('{')?;
            let end = trimmed.rfind('}')?;
            (start < end).then(|| trimmed[start..=end].to_string())
        })
        .ok_or_else(|| "no JSON object in critic reply".to_string())?;
    let raw: RawVerdict = serde_json::from_str::<Value>(&body)
        .and_then(serde_json::from_value)
        .map_err(|e| e.to_string())?;
    let failure_modes: Vec<FailureTag> = raw
        .failure_modes
        .into_iter()
        .map(|t| match FailureCode::parse(&t.code) {
            Some(code) => FailureTag::new(code, t.detail),
            None => FailureTag::new(FailureCode::IncompleteReasoning, format!("{}: {}", t.code, t.detail)),
        })
        .collect();
    Ok(Verdict {
        passed: raw.passed && failure_modes.is_empty(),
        failure_modes,
        rationale: raw.rationale,
        mechanical_flags: BTreeSet::new(),
    })
}

/// Judges a finished trajectory. Mechanical failures short-circuit the
/// backend call; an unparseable critic reply fails safe.
pub fn critique(query: &str, trajectory: &Trajectory, critic: &mut dyn ChatBackend) -> Result<Verdict, BackendError> {
    let (flags, tags) = mechanical_checks(trajectory);
    if !flags.is_empty() {
        let rationale = tags.iter().map(|t| t.detail.as_str()).collect::<Vec<_>>().join("; ");
        return Ok(Verdict { passed: false, failure_modes: tags, rationale, mechanical_flags: flags });
    }
    let request = ChatRequest::new(
        Role::Critic,
        vec![Message::system(critic_system()), Message::user(critic_user(query, trajectory))],
    );
    let reply = critic.chat(&request)?;
    Ok(parse_verdict(&reply.text).unwrap_or_else(|e| {
        tracing::warn!("critic reply did not parse: {e}");
        Verdict {
            passed: false,
            failure_modes: vec![FailureTag::new(FailureCode::IncompleteReasoning, "critic reply did not parse")],
            rationale: reply.text.clone(),
            mechanical_flags: BTreeSet::new(),
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Script, ScriptRule, ScriptedChat};
    use crate::fsm::StepRecord;

    fn finished(answer: &str) -> Trajectory {
        let mut t = Trajectory::new("q");
        t.steps.push(StepRecord {
            index: 0,
            state_id: "analysis".into(),
            agent_output: answer.into(),
            tool_calls: vec![],
            chosen_transition: None,
        });
        t.visit_counts.insert("analysis".into(), 1);
        t.final_answer = Some(answer.into());
        t.halted_reason = HaltReason::Terminal;
        t
    }

    #[test]
    fn loop_needs_no_backend_call() {
        let mut t = Trajectory::new("q");
        t.halted_reason = HaltReason::LoopDetected;
        let mut critic = ScriptedChat::new(Script::default()).unwrap();
        let v = critique("q", &t, &mut critic).unwrap();
        assert!(!v.passed);
        assert!(v.mechanical_flags.contains(&MechanicalFlag::LoopDetected));
        assert!(v.mechanical_flags.contains(&MechanicalFlag::EmptyAnswer));
        assert!(v.has(FailureCode::Loop));
        assert_eq!(critic.turns(Role::Critic), 0);
    }

    #[test]
    fn pass_reply_passes() {
        let mut critic = ScriptedChat::new(Script::new(vec![ScriptRule::at_turn(Role::Critic, 1, "PASS")])).unwrap();
        let v = critique("q", &finished("42"), &mut critic).unwrap();
        assert!(v.passed);
        assert!(v.failure_modes.is_empty() && v.mechanical_flags.is_empty());
    }

    #[test]
    fn tagged_failure_is_surfaced() {
        let reply = r#"{"passed": false, "failure_modes": [{"code": "QUANT_EVIDENCE_MISSING", "detail": "no Wh/kg values"}], "rationale": "vague"}"#;
        let mut critic = ScriptedChat::new(Script::new(vec![ScriptRule::at_turn(Role::Critic, 1, reply)])).unwrap();
        let v = critique("q", &finished("Tesla has high density"), &mut critic).unwrap();
        assert!(!v.passed);
        assert_eq!(v.failure_modes, vec![FailureTag::new(FailureCode::QuantEvidenceMissing, "no Wh/kg values")]);
    }

    #[test]
    fn unknown_code_maps_to_incomplete_reasoning() {
        let v = parse_verdict(r#"{"passed": true, "failure_modes": [{"code": "VIBES", "detail": "off"}]}"#).unwrap();
        assert!(!v.passed);
        assert_eq!(v.failure_modes[0].code, FailureCode::IncompleteReasoning);
        assert_eq!(v.failure_modes[0].detail, "VIBES: off");
    }

    #[test]
    fn garbage_reply_fails_safe() {
        let mut critic =
            ScriptedChat::new(Script::new(vec![ScriptRule::at_turn(Role::Critic, 1, "looks fine to me")])).unwrap();
        let v = critique("q", &finished("42"), &mut critic).unwrap();
        assert!(!v.passed);
        assert!(v.has(FailureCode::IncompleteReasoning));
        assert_eq!(v.rationale, "looks fine to me");
    }
}
