//! Distills a finished evolution episode into an experience record.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, ChatBackend, ChatRequest, Embedder, Message, Role};
use crate::evolution::{AtomicOp, EvolutionOutcome};
use crate::fsm::{FsmConfig, ForbiddenPattern, HaltReason, Trajectory};
use crate::memory::embed;

pub const REFLECTION_UNAVAILABLE: &str = "(reflection unavailable)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceRecord {
    /// Assigned by the pool on append.
    #[serde(default)]
    pub id: String,
    pub query_text: String,
    pub query_embedding: Vec<f64>,
    pub outcome: Outcome,
    pub config_snapshot: FsmConfig,
    #[serde(default)]
    pub op_sequence: Vec<AtomicOp>,
    #[serde(default)]
    pub rationale: String,
    #[serde(default)]
    pub failure_constraints: Vec<ForbiddenPattern>,
    /// Assigned by the pool on append.
    #[serde(default)]
    pub created_at: u64,
}

/// Edges that closed the loop: when the run halted on a loop, every step
/// pair re-entering the looping state after its first visit.
pub fn loop_edges(trajectory: &Trajectory) -> Vec<(String, String)> {
    if trajectory.halted_reason != HaltReason::LoopDetected {
        return Vec::new();
    }
    let seq = trajectory.state_sequence();
    let Some(&looped) = seq.last() else { return Vec::new() };
    let Some(first) = seq.iter().position(|s| *s == looped) else { return Vec::new() };
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for pair in seq[first..].windows(2) {
        if pair[1] == looped && seen.insert((pair[0], pair[1])) {
            out.push((pair[0].to_string(), pair[1].to_string()));
        }
    }
    out
}

fn reflector_system() -> String {
    "You are the reflection agent. In two or three sentences, state the reusable strategy (or the pitfall) \
     this episode demonstrates, naming the workflow changes that mattered.\n"
        .to_string()
}

fn reflector_user(query: &str, episode: &EvolutionOutcome) -> String {
    let mut s = format!(
        "Query: {query}\n## Outcome\n{}\n## Operations applied\n",
        if episode.succeeded { "SUCCESS" } else { "FAILURE" }
    );
    if episode.op_log.is_empty() {
        s.push_str("(none)\n");
    }
    for entry in &episode.op_log {
        s.push_str(&format!("- {} {}: {}\n", entry.op.edit.kind(), entry.op.edit.target(), entry.op.rationale));
    }
    s.push_str("## Final trajectory\n");
    s.push_str(&episode.final_trajectory.digest());
    s
}

/// Builds the pool record for an episode. The embedding error is the only
/// failure; a reflection backend fault degrades to a placeholder rationale.
pub fn reflect(
    episode: &EvolutionOutcome,
    query: &str,
    embedder: &mut dyn Embedder,
    reflector: &mut dyn ChatBackend,
) -> Result<ExperienceRecord, BackendError> {
    let query_embedding = embed(query, embedder)?;
    let request = ChatRequest::new(
        Role::Reflector,
        vec![Message::system(reflector_system()), Message::user(reflector_user(query, episode))],
    );
    let rationale = match reflector.chat(&request) {
        Ok(reply) if !reply.text.trim().is_empty() => reply.text.trim().to_string(),
        Ok(_) => REFLECTION_UNAVAILABLE.to_string(),
        Err(e) => {
            tracing::warn!("reflection failed: {e}");
            REFLECTION_UNAVAILABLE.to_string()
        }
    };
    let outcome = if episode.succeeded { Outcome::Success } else { Outcome::Failure };
    let failure_constraints = match outcome {
        Outcome::Success => Vec::new(),
        Outcome::Failure => loop_edges(&episode.final_trajectory)
            .into_iter()
            .map(|(from, to)| {
                let why = format!("{from} -> {to} closed a loop on query {query:?}");
                ForbiddenPattern::edge(from, to, why)
            })
            .collect(),
    };
    Ok(ExperienceRecord {
        id: String::new(),
        query_text: query.to_string(),
        query_embedding,
        outcome,
        config_snapshot: episode.final_config.clone(),
        op_sequence: episode.op_log.iter().map(|e| e.op.clone()).collect(),
        rationale,
        failure_constraints,
        created_at: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fsm::StepRecord;

    fn looped(seq: &[&str]) -> Trajectory {
        let mut t = Trajectory::new("q");
        for (i, s) in seq.iter().enumerate() {
            t.steps.push(StepRecord {
                index: i,
                state_id: s.to_string(),
                agent_output: String::new(),
                tool_calls: vec![],
                chosen_transition: None,
            });
            *t.visit_counts.entry(s.to_string()).or_insert(0) += 1;
        }
        t.halted_reason = HaltReason::LoopDetected;
        t
    }

    #[test]
    fn search_browse_loop_yields_back_edge() {
        let t = looped(&["search", "browse", "search", "browse", "search", "browse", "search"]);
        assert_eq!(loop_edges(&t), vec![("browse".to_string(), "search".to_string())]);
    }

    #[test]
    fn self_loop_and_non_loop() {
        let t = looped(&["a", "s", "s", "s", "s"]);
        assert_eq!(loop_edges(&t), vec![("s".to_string(), "s".to_string())]);
        let mut t = looped(&["a", "b"]);
        t.halted_reason = HaltReason::StepCap;
        assert!(loop_edges(&t).is_empty());
        assert!(loop_edges(&looped(&[])).is_empty());
    }
}
