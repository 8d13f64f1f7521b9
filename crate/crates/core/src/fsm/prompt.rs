//! Prompt text for state execution and routing. Script rules in
//! [`crate::scenarios`] match against these layouts, so changes here are
//! format changes.

use super::engine::ToolLog;
use super::{FsmConfig, StateDef, Trajectory, TransitionRule};

pub(crate) fn truncate_chars(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => s[..i].to_string(),
        None => s.to_string(),
    }
}

pub(crate) fn first_line(s: &str) -> &str {
    s.lines().next().unwrap_or("")
}

/// The last `window` steps with their tool payloads, oldest first.
pub(crate) fn render_context(trajectory: &Trajectory, log: &ToolLog, window: usize, max_chars: usize) -> String {
    let start = trajectory.steps.len().saturating_sub(window);
    let recent = &trajectory.steps[start..];
    if recent.is_empty() {
        return "(none)\n".to_string();
    }
    let mut out = String::new();
    for step in recent {
        out.push_str(&format!("[step {}] {}: {}\n", step.index, step.state_id, step.agent_output));
        for call in &step.tool_calls {
            let body = match call.output_hash.as_deref().and_then(|h| log.payload(h)) {
                Some(full) => truncate_chars(full, max_chars),
                None => call.output_preview.clone(),
            };
            out.push_str(&format!("  tool {}({:?}) -> {}\n", call.tool, call.input, body));
        }
    }
    out
}

pub(crate) fn agent_system(state: &StateDef, max_tool_calls: usize) -> String {
    let tools = if state.allowed_tools.is_empty() {
        "none".to_string()
    } else {
        state.allowed_tools.iter().cloned().collect::<Vec<_>>().join(", ")
    };
    let mut s = format!(
        "You are the {name} agent in a multi-step research workflow.\n\
         ## Current state: {name} ({id})\n\
         ## Instruction\n{instruction}\n\
         ## Tools\nAllowed tools: {tools}\n",
        name = state.name,
        id = state.id,
        instruction = state.instruction,
    );
    if !state.allowed_tools.is_empty() {
        s.push_str(&format!(
            "Request a tool with a fenced block tagged `tool` containing {{\"tool\": \"<name>\", \"input\": \"<text>\"}}. \
             At most {max_tool_calls} tool calls per step.\n"
        ));
    }
    if state.is_terminal {
        s.push_str("This is the final state: reply with the final answer only.\n");
    }
    s
}

pub(crate) fn agent_user(query: &str, context: &str) -> String {
    format!("Query: {query}\n\n## Recent context\n{context}")
}

pub(crate) fn tool_results(results: &[(String, String, String)]) -> String {
    let mut s = String::from("## Tool results\n");
    for (tool, input, output) in results {
        s.push_str(&format!("{tool}({input:?}) -> {output}\n"));
    }
    s.push_str("Now give your output for this state.\n");
    s
}

pub(crate) fn router_system() -> String {
    "You route a research workflow between states. Reply with the id of exactly one candidate next state.\n"
        .to_string()
}

pub(crate) fn router_user(
    config: &FsmConfig,
    current: &str,
    trajectory: &Trajectory,
    context: &str,
    candidates: &[&TransitionRule],
) -> String {
    let mut s = format!(
        "Query: {}\n## Current state: {current}\n## Recent context\n{context}## Candidates\n",
        trajectory.query
    );
    for t in candidates {
        let name = config.state(&t.to_state).map(|s| s.name.as_str()).unwrap_or("");
        let guidance = t.condition.guidance.as_deref().unwrap_or("");
        s.push_str(&format!("- {} ({name}): {guidance}\n", t.to_state));
    }
    s
}
