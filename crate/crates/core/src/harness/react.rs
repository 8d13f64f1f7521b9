//! Single-agent think/act/observe baseline with no state machine.
//!
//! One agent sees the whole scratchpad each turn, may call any tool, and
//! stops when it writes `FINAL ANSWER:`. Runs are capped by the step limit
//! only; the trajectory records every turn under the pseudo-state `react`.

use crate::backends::{BackendError, ChatBackend, ChatRequest, Message, Role, ToolRegistry};
use crate::fsm::{digest, truncate_chars, HaltReason, RunLimits, StepRecord, ToolCallRecord, ToolLog, ToolPayload, Trajectory};

pub const REACT_STATE: &str = "react";
const FINAL_MARKER: &str = "FINAL ANSWER:";

fn system() -> &'static str {
    "You are a research agent working alone. Think, then act with a fenced block tagged `tool` containing \
     {\"tool\": \"search\" | \"browse\", \"input\": \"<text>\"}. When you can answer, reply with a line \
     starting FINAL ANSWER: followed by the answer.\n## Mode: react\n"
}

fn scratchpad(trajectory: &Trajectory, log: &ToolLog, max_chars: usize) -> String {
    if trajectory.steps.is_empty() {
        return "(empty)\n".into();
    }
    let mut s = String::new();
    for step in &trajectory.steps {
        s.push_str(&format!("[step {}] {}\n", step.index, step.agent_output));
        for call in &step.tool_calls {
            let body = match call.output_hash.as_deref().and_then(|h| log.payload(h)) {
                Some(full) => truncate_chars(full, max_chars),
                None => call.output_preview.clone(),
            };
            s.push_str(&format!("  tool {}({:?}) -> {}\n", call.tool, call.input, body));
        }
    }
    s
}

fn final_answer(text: &str) -> Option<String> {
    let at = text.find(FINAL_MARKER)?;
    let answer = text[at + FINAL_MARKER.len()..].trim();
    (!answer.is_empty()).then(|| answer.to_string())
}

/// Runs the loop. Backend faults halt with ERROR, as in the engine.
pub fn run_react(
    query: &str,
    chat: &mut dyn ChatBackend,
    tools: &mut ToolRegistry,
    limits: &RunLimits,
    log: &mut ToolLog,
) -> Trajectory {
    let mut t = Trajectory::new(query);
    loop {
        if t.steps.len() >= limits.max_steps {
            t.halted_reason = HaltReason::StepCap;
            return t;
        }
        let index = t.steps.len();
        let request = ChatRequest::new(
            Role::Agent,
            vec![
                Message::system(system()),
                Message::user(format!(
                    "Query: {query}\n\n## Scratchpad\n{}",
                    scratchpad(&t, log, limits.context_chars)
                )),
            ],
        );
        let reply = match chat.chat(&request) {
            Ok(r) => r,
            Err(e) => return fault(t, e),
        };
        let mut records = Vec::new();
        for req in reply.tool_calls().into_iter().take(limits.max_tool_calls) {
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
                    records.push(ToolCallRecord {
                        tool: req.tool,
                        input: req.input,
                        output_hash: Some(hash),
                        output_preview: truncate_chars(&output, 200),
                        refused: false,
                        failed: false,
                    });
                }
                Err(e) => records.push(ToolCallRecord {
                    tool: req.tool,
                    input: req.input,
                    output_hash: None,
                    output_preview: format!("error: {e}"),
                    refused: false,
                    failed: true,
                }),
            }
        }
        let prose = reply.prose();
        let answer = final_answer(&prose);
        t.steps.push(StepRecord {
            index,
            state_id: REACT_STATE.into(),
            agent_output: prose,
            tool_calls: records,
            chosen_transition: None,
        });
        *t.visit_counts.entry(REACT_STATE.into()).or_insert(0) += 1;
        if let Some(a) = answer {
            t.final_answer = Some(a);
            t.halted_reason = HaltReason::Terminal;
            return t;
        }
    }
}

fn fault(mut t: Trajectory, e: BackendError) -> Trajectory {
    t.halted_reason = HaltReason::Error;
    t.error = Some(e.to_string());
    t.backend_fault = true;
    t
}
