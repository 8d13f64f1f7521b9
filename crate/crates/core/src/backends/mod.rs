//! Adapters for chat completion, embeddings and tools.
//!
//! Every role that talks to a model (agent states, router, critic, op
//! proposer, reflection, rewriter, judge) goes through [`ChatBackend`]. The
//! role travels inside the request so a single endpoint, script or cassette
//! can serve all of them.

mod cassette;
mod fixtures;
pub mod live;
mod scripted;
mod tools;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use cassette::{fingerprint, normalize_for_fingerprint, CassetteChat, CassetteEntry, CassetteMode};
pub use fixtures::{normalize_query, normalize_url, FixtureDoc, FixtureTools, SearchHit};
pub use live::{HttpRequest, HttpResponse, LiveChat, LiveEmbedder, LiveTools, Transport, TransportError, UreqTransport};
pub use scripted::{Script, ScriptRule, ScriptedChat};
pub use tools::{SourceDescriptor, ToolBackend, ToolRegistry, ToolResult, BROWSE_TOOL, SEARCH_TOOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Agent,
    Router,
    Critic,
    Proposer,
    Reflector,
    Rewriter,
    Judge,
}

impl Role {
    pub fn label(self) -> &'static str {
        match self {
            Role::Agent => "agent",
            Role::Router => "router",
            Role::Critic => "critic",
            Role::Proposer => "proposer",
            Role::Reflector => "reflector",
            Role::Rewriter => "rewriter",
            Role::Judge => "judge",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Speaker,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Speaker::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Speaker::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Speaker::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role: Role,
    pub messages: Vec<Message>,
}

impl ChatRequest {
    pub fn new(role: Role, messages: Vec<Message>) -> Self {
        Self { role, messages }
    }

    /// Flat text form used by script patterns: one `speaker: content` block per message.
    pub fn rendered(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            let who = match m.role {
                Speaker::System => "system",
                Speaker::User => "user",
                Speaker::Assistant => "assistant",
            };
            out.push_str(who);
            out.push_str(": ");
            out.push_str(&m.content);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatReply {
    pub text: String,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub latency_ms: u64,
}

impl ChatReply {
    pub fn new(text: impl Into<String>, model: impl Into<String>) -> Self {
        Self { text: text.into(), model: model.into(), latency_ms: 0 }
    }

    /// Tool requests embedded as fenced ```tool blocks holding
    /// `{"tool": "...", "input": "..."}`. Blocks that do not parse are skipped.
    pub fn tool_calls(&self) -> Vec<ToolCallRequest> {
        fenced_blocks(&self.text, "tool")
            .into_iter()
            .filter_map(|body| match serde_json::from_str::<ToolCallRequest>(body) {
                Ok(call) => Some(call),
                Err(e) => {
                    tracing::warn!("skipping malformed tool block: {e}");
                    None
                }
            })
            .collect()
    }

    /// Reply text with tool blocks removed.
    pub fn prose(&self) -> String {
        strip_fenced_blocks(&self.text, "tool").trim().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCallRequest {
    pub tool: String,
    #[serde(default)]
    pub input: String,
}

/// Bodies of fenced blocks opened with ```` ```tag ````.
pub fn fenced_blocks<'a>(text: &'a str, tag: &str) -> Vec<&'a str> {
    let open = format!("```{tag}");
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(&open) {
        let after = &rest[start + open.len()..];
        // The tag must end the fence line (so ```json does not match ```js).
        let Some(nl) = after.find('\n') else { break };
        if !after[..nl].trim().is_empty() {
            rest = &after[nl..];
            continue;
        }
        let body_start = &after[nl + 1..];
        let Some(end) = body_start.find("```") else { break };
        out.push(&body_start[..end]);
        rest = &body_start[end + 3..];
    }
    out
}

fn strip_fenced_blocks(text: &str, tag: &str) -> String {
    let mut out = text.to_string();
    for body in fenced_blocks(text, tag) {
        let block = format!("```{tag}\n{body}```");
        out = out.replacen(&block, "", 1);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("endpoint error: {0}")]
    Endpoint(String),
    #[error("no script rule for role {role} at turn {turn}")]
    ScriptMiss { role: Role, turn: usize },
    #[error("cassette miss for fingerprint {fingerprint} (nearest recorded: {nearest:?})")]
    CassetteMiss { fingerprint: String, nearest: Option<String> },
    #[error("fixture miss for key {key:?}")]
    FixtureMiss { key: String },
    #[error("backend returned an empty reply")]
    EmptyReply,
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("invalid backend input: {0}")]
    InvalidInput(String),
}

pub trait ChatBackend: Send {
    fn chat(&mut self, request: &ChatRequest) -> Result<ChatReply, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn chat(&mut self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        (**self).chat(request)
    }
}

/// Produces raw embedding vectors; callers normalize.
pub trait Embedder: Send {
    fn dim(&self) -> usize;
    fn embed_raw(&mut self, text: &str) -> Result<Vec<f64>, BackendError>;
}

/// The full set of handles one query needs.
pub struct Backends {
    pub chat: Box<dyn ChatBackend>,
    pub tools: ToolRegistry,
    pub embedder: Box<dyn Embedder>,
}

impl Backends {
    pub fn new(chat: Box<dyn ChatBackend>, tools: ToolRegistry, embedder: Box<dyn Embedder>) -> Self {
        Self { chat, tools, embedder }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tool_blocks_and_prose() {
        let reply = ChatReply::new(
            "Looking.\n```tool\n{\"tool\": \"search\", \"input\": \"dam 2023\"}\n```\n```json\n[1]\n```\n```tool\nnot json\n```",
            "m",
        );
        let calls = reply.tool_calls();
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].tool, "search");
        assert_eq!(calls[0].input, "dam 2023");
        assert!(!reply.prose().contains("```tool"));
        assert!(reply.prose().starts_with("Looking."));
    }

    #[test]
    fn fence_tag_must_match_exactly() {
        assert!(fenced_blocks("```jsonl\n{}\n```", "json").is_empty());
        assert_eq!(fenced_blocks("```json \n[]\n```", "json"), vec!["[]\n"]);
    }
}
