//! Table-driven chat backend for offline runs.
//!
//! Rules are tried in order; the first whose role, turn and pattern all
//! match supplies the reply. Turns are counted per role starting at 1.
//! When a rule has a pattern, `$1` / `${name}` in the reply expand to the
//! pattern's captures (`$$` is a literal dollar sign).

use std::collections::HashMap;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatReply, ChatRequest, Role};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    /// `None` matches every role.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<usize>,
    /// Regex matched against [`ChatRequest::rendered`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    pub reply: String,
}

impl ScriptRule {
    pub fn new(role: Role, pattern: &str, reply: impl Into<String>) -> Self {
        Self {
            role: Some(role),
            turn: None,
            pattern: Some(pattern.to_string()),
            reply: reply.into(),
        }
    }

    pub fn at_turn(role: Role, turn: usize, reply: impl Into<String>) -> Self {
        Self { role: Some(role), turn: Some(turn), pattern: None, reply: reply.into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    pub rules: Vec<ScriptRule>,
}

impl Script {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self { rules }
    }

    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        serde_json::from_str(text).map_err(|e| BackendError::InvalidInput(format!("script: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serializes")
    }
}

pub struct ScriptedChat {
    rules: Vec<(ScriptRule, Option<Regex>)>,
    turns: HashMap<Role, usize>,
}

impl ScriptedChat {
    pub fn new(script: Script) -> Result<Self, BackendError> {
        let rules = script
            .rules
            .into_iter()
            .map(|rule| {
                let re = rule
                    .pattern
                    .as_deref()
                    .map(Regex::new)
                    .transpose()
                    .map_err(|e| BackendError::InvalidInput(format!("script pattern: {e}")))?;
                Ok((rule, re))
            })
            .collect::<Result<Vec<_>, BackendError>>()?;
        Ok(Self { rules, turns: HashMap::new() })
    }

    /// Per-role count of requests served so far.
    pub fn turns(&self, role: Role) -> usize {
        self.turns.get(&role).copied().unwrap_or(0)
    }
}

impl ChatBackend for ScriptedChat {
    fn chat(&mut self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        let turn = {
            let t = self.turns.entry(request.role).or_insert(0);
            *t += 1;
            *t
        };
        let text = request.rendered();
        for (rule, re) in &self.rules {
            if rule.role.is_some_and(|r| r != request.role) {
                continue;
            }
            if rule.turn.is_some_and(|t| t != turn) {
                continue;
            }
            let reply = match re {
                None => rule.reply.clone(),
                Some(re) => match re.captures(&text) {
                    None => continue,
                    Some(caps) => {
                        let mut out = String::new();
                        caps.expand(&rule.reply, &mut out);
                        out
                    }
                },
            };
            if reply.trim().is_empty() {
                return Err(BackendError::EmptyReply);
            }
            return Ok(ChatReply::new(reply, "scripted"));
        }
        Err(BackendError::ScriptMiss { role: request.role, turn })
    }
}
