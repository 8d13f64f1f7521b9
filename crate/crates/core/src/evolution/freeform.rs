//! Unstructured baseline: the backend rewrites every instruction at once and
//! the topology is left alone. Used only by the rewrite ablation.

use std::collections::BTreeMap;

use crate::backends::{fenced_blocks, BackendError, ChatBackend, ChatRequest, Message, Role};
use crate::critic::Verdict;
use crate::fsm::FsmConfig;

fn rewriter_user(config: &FsmConfig, verdict: &Verdict) -> String {
    let mut s = String::from("## Failure modes\n");
    for tag in &verdict.failure_modes {
        s.push_str(&format!("- {}: {}\n", tag.code.label(), tag.detail));
    }
    s.push_str("## Instructions\n");
    for st in &config.states {
        s.push_str(&format!("- {} ({}): {}\n", st.id, st.name, st.instruction.replace('\n', " ")));
    }
    s
}

/// Replaces state instructions with the backend's rewrite. The reply is a
/// JSON object mapping state id to new instruction; states it omits keep
/// their text. Topology is never touched.
pub fn apply_freeform_rewrite(
    config: &FsmConfig,
    verdict: &Verdict,
    rewriter: &mut dyn ChatBackend,
) -> Result<FsmConfig, BackendError> {
    let request = ChatRequest::new(
        Role::Rewriter,
        vec![
            Message::system(
                "Rewrite the workflow's state instructions to fix the failures. Reply with a JSON object \
                 mapping each state id to its full new instruction.",
            ),
            Message::user(rewriter_user(config, verdict)),
        ],
    );
    let reply = rewriter.chat(&request)?;
    let text = reply.text.trim();
    if text.is_empty() {
        return Err(BackendError::EmptyReply);
    }
    let body = fenced_blocks(text, "json").into_iter().next().unwrap_or(text);
    let map: BTreeMap<String, String> = serde_json::from_str(body.trim())
        .map_err(|e| BackendError::InvalidInput(format!("rewrite reply is not an id-to-instruction map: {e}")))?;
    if map.is_empty() || !map.keys().any(|k| config.state(k).is_some()) {
        return Err(BackendError::InvalidInput("rewrite reply names no known state".into()));
    }
    let mut next = config.clone();
    for st in &mut next.states {
        if let Some(text) = map.get(&st.id) {
            st.instruction = text.clone();
        }
    }
    next.version = config.version + 1;
    Ok(next)
}
