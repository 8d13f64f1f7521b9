use serde::{Deserialize, Serialize};

use super::BackendError;
use crate::fsm::truncate_chars;

pub const SEARCH_TOOL: &str = "search";
pub const BROWSE_TOOL: &str = "browse";

/// Default bound on a single tool payload.
pub const DEFAULT_TOOL_OUTPUT_CHARS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDescriptor {
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool: String,
    pub input: String,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceDescriptor>,
}

/// Web search plus page reading.
pub trait ToolBackend: Send {
    fn search(&mut self, query: &str) -> Result<Vec<ToolResult>, BackendError>;
    fn browse(&mut self, url: &str) -> Result<ToolResult, BackendError>;
}

/// Dispatches tool calls by name and enforces the output bound.
pub struct ToolRegistry {
    backend: Box<dyn ToolBackend>,
    max_output_chars: usize,
}

impl ToolRegistry {
    pub fn new(backend: Box<dyn ToolBackend>) -> Self {
        Self { backend, max_output_chars: DEFAULT_TOOL_OUTPUT_CHARS }
    }

    pub fn with_limit(mut self, max_output_chars: usize) -> Self {
        self.max_output_chars = max_output_chars;
        self
    }

    pub fn max_output_chars(&self) -> usize {
        self.max_output_chars
    }

    pub fn knows(&self, tool: &str) -> bool {
        tool == SEARCH_TOOL || tool == BROWSE_TOOL
    }

    pub fn search(&mut self, query: &str) -> Result<Vec<ToolResult>, BackendError> {
        let mut hits = self.backend.search(query)?;
        for hit in &mut hits {
            hit.output = truncate_chars(&hit.output, self.max_output_chars);
        }
        Ok(hits)
    }

    pub fn browse(&mut self, url: &str) -> Result<ToolResult, BackendError> {
        let mut page = self.backend.browse(url)?;
        page.output = truncate_chars(&page.output, self.max_output_chars);
        Ok(page)
    }

    /// Runs a tool and renders its payload as text.
    pub fn call(&mut self, tool: &str, input: &str) -> Result<String, BackendError> {
        let text = match tool {
            SEARCH_TOOL => {
                let hits = self.search(input)?;
                if hits.is_empty() {
                    "no results".to_string()
                } else {
                    hits.iter()
                        .enumerate()
                        .map(|(i, h)| format!("{}. {}", i + 1, h.output.replace('\n', "\n   ")))
                        .collect::<Vec<_>>()
                        .join("\n")
                }
            }
            BROWSE_TOOL => self.browse(input)?.output,
            other => return Err(BackendError::UnknownTool(other.to_string())),
        };
        Ok(truncate_chars(&text, self.max_output_chars))
    }
}
