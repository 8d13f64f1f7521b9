//! HTTP adapters: a chat-completions style endpoint, an embeddings endpoint,
//! a search API and a page reader.
//!
//! All network I/O goes through [`Transport`], so tests can count calls or
//! serve canned responses. Only transport-level failures are retried (two
//! retries, backoff 1 s then 2 s); HTTP error statuses are returned at once.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::tools::{SourceDescriptor, ToolBackend, ToolResult, BROWSE_TOOL, SEARCH_TOOL};
use super::{BackendError, ChatBackend, ChatReply, ChatRequest, Embedder, Speaker};

pub const ENV_CHAT_BASE_URL: &str = "CHAT_BASE_URL";
pub const ENV_CHAT_API_KEY: &str = "CHAT_API_KEY";
pub const ENV_CHAT_MODEL: &str = "CHAT_MODEL";
pub const ENV_EMBED_BASE_URL: &str = "EMBED_BASE_URL";
pub const ENV_SEARCH_API_KEY: &str = "SEARCH_API_KEY";
pub const ENV_READER_BASE_URL: &str = "READER_BASE_URL";

const SEARCH_ENDPOINT: &str = "https://google.serper.dev/search";
const DEFAULT_READER_BASE: &str = "https://r.jina.ai";
const RETRIES: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: &'static str,
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// A failure below HTTP: connection refused, DNS, timeout, broken stream.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("transport failure: {0}")]
pub struct TransportError(pub String);

pub trait Transport: Send + Sync {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

impl Transport for UreqTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let result = match request.method {
            "GET" => {
                let mut rb = self.agent.get(&request.url);
                for (k, v) in &request.headers {
                    rb = rb.header(k, v);
                }
                rb.call()
            }
            _ => {
                let mut rb = self.agent.post(&request.url);
                for (k, v) in &request.headers {
                    rb = rb.header(k, v);
                }
                rb.send(request.body.clone().unwrap_or_default())
            }
        };
        let mut resp = result.map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Shared retry loop. `sleep` is injectable so tests do not wait.
#[derive(Clone)]
struct Retrier {
    transport: Arc<dyn Transport>,
    sleep: fn(Duration),
}

impl Retrier {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, BackendError> {
        let mut delay = Duration::from_secs(1);
        let mut attempt = 0;
        loop {
            match self.transport.send(request) {
                Ok(resp) if (200..300).contains(&resp.status) => return Ok(resp),
                Ok(resp) => {
                    return Err(BackendError::Endpoint(format!(
                        "{} returned {}: {}",
                        request.url,
                        resp.status,
                        crate::fsm::truncate_chars(&resp.body, 300)
                    )))
                }
                Err(e) if attempt < RETRIES => {
                    tracing::warn!("{} failed ({e}); retrying in {delay:?}", request.url);
                    (self.sleep)(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err(e) => {
                    return Err(BackendError::Endpoint(format!(
                        "{} failed after {} retries: {e}",
                        request.url, RETRIES
                    )))
                }
            }
        }
    }
}

fn env(name: &str) -> Result<String, BackendError> {
    std::env::var(name).map_err(|_| BackendError::InvalidInput(format!("environment variable {name} is not set")))
}

fn parse_json(body: &str) -> Result<Value, BackendError> {
    serde_json::from_str(body).map_err(|e| BackendError::Endpoint(format!("malformed JSON response: {e}")))
}

pub struct LiveChat {
    http: Retrier,
    base_url: String,
    api_key: String,
    model: String,
}

impl LiveChat {
    pub fn new(
        transport: Arc<dyn Transport>,
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        model: impl Into<String>,
    ) -> Self {
        Self {
            http: Retrier { transport, sleep: std::thread::sleep },
            base_url: base_url.into(),
            api_key: api_key.into(),
            model: model.into(),
        }
    }

    pub fn from_env(transport: Arc<dyn Transport>) -> Result<Self, BackendError> {
        Ok(Self::new(transport, env(ENV_CHAT_BASE_URL)?, env(ENV_CHAT_API_KEY)?, env(ENV_CHAT_MODEL)?))
    }

    pub fn with_sleep(mut self, sleep: fn(Duration)) -> Self {
        self.http.sleep = sleep;
        self
    }
}

impl ChatBackend for LiveChat {
    fn chat(&mut self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Speaker::System => "system",
                    Speaker::User => "user",
                    Speaker::Assistant => "assistant",
                };
                json!({"role": role, "content": m.content})
            })
            .collect();
        let body = json!({"model": self.model, "messages": messages, "temperature": 0});
        let req = HttpRequest {
            method: "POST",
            url: format!("{}/chat/completions", self.base_url.trim_end_matches('/')),
            headers: vec![
                ("Authorization".into(), format!("Bearer {}", self.api_key)),
                ("Content-Type".into(), "application/json".into()),
            ],
            body: Some(body.to_string()),
        };
        let started = Instant::now();
        let resp = self.http.send(&req)?;
        let v = parse_json(&resp.body)?;
        let text = v["choices"][0]["message"]["content"].as_str().unwrap_or_default();
        if text.trim().is_empty() {
            return Err(BackendError::EmptyReply);
        }
        Ok(ChatReply {
            text: text.to_string(),
            model: v["model"].as_str().unwrap_or(&self.model).to_string(),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

pub struct LiveEmbedder {
    http: Retrier,
    base_url: String,
    api_key: String,
    model: String,
    dim: usize,
}

impl LiveEmbedder {
    pub fn new(
        transport: Arc<dyn Transport>,
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        model: impl Into<String>,
        dim: usize,
    ) -> Self {
        Self {
            http: Retrier { transport, sleep: std::thread::sleep },
            base_url: base_url.into(),
            api_key: api_key.into(),
            model: model.into(),
            dim,
        }
    }

    /// Reads `EMBED_BASE_URL`; the key comes from `CHAT_API_KEY` and the
    /// model from `EMBED_MODEL` (default `text-embedding-3-small`).
    pub fn from_env(transport: Arc<dyn Transport>, dim: usize) -> Result<Self, BackendError> {
        let model = std::env::var("EMBED_MODEL").unwrap_or_else(|_| "text-embedding-3-small".into());
        Ok(Self::new(transport, env(ENV_EMBED_BASE_URL)?, env(ENV_CHAT_API_KEY)?, model, dim))
    }
}

impl Embedder for LiveEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&mut self, text: &str) -> Result<Vec<f64>, BackendError> {
        let req = HttpRequest {
            method: "POST",
            url: format!("{}/embeddings", self.base_url.trim_end_matches('/')),
            headers: vec![
                ("Authorization".into(), format!("Bearer {}", self.api_key)),
                ("Content-Type".into(), "application/json".into()),
            ],
            body: Some(json!({"model": self.model, "input": text, "dimensions": self.dim}).to_string()),
        };
        let v = parse_json(&self.http.send(&req)?.body)?;
        let vec: Vec<f64> = v["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| BackendError::Endpoint("response has no embedding".into()))?
            .iter()
            .map(|x| x.as_f64().unwrap_or(0.0))
            .collect();
        if vec.len() != self.dim {
            return Err(BackendError::Endpoint(format!(
                "embedding has dimension {}, expected {}",
                vec.len(),
                self.dim
            )));
        }
        Ok(vec)
    }
}

/// Search via a Serper-style API and page text via a Jina-style reader.
pub struct LiveTools {
    http: Retrier,
    search_key: String,
    reader_base: String,
}

impl LiveTools {
    pub fn new(transport: Arc<dyn Transport>, search_key: impl Into<String>, reader_base: impl Into<String>) -> Self {
        Self {
            http: Retrier { transport, sleep: std::thread::sleep },
            search_key: search_key.into(),
            reader_base: reader_base.into(),
        }
    }

    pub fn from_env(transport: Arc<dyn Transport>) -> Result<Self, BackendError> {
        let reader = std::env::var(ENV_READER_BASE_URL).unwrap_or_else(|_| DEFAULT_READER_BASE.into());
        Ok(Self::new(transport, env(ENV_SEARCH_API_KEY)?, reader))
    }
}

impl ToolBackend for LiveTools {
    fn search(&mut self, query: &str) -> Result<Vec<ToolResult>, BackendError> {
        let req = HttpRequest {
            method: "POST",
            url: SEARCH_ENDPOINT.into(),
            headers: vec![
                ("X-API-KEY".into(), self.search_key.clone()),
                ("Content-Type".into(), "application/json".into()),
            ],
            body: Some(json!({"q": query}).to_string()),
        };
        let v = parse_json(&self.http.send(&req)?.body)?;
        let organic = v["organic"].as_array().cloned().unwrap_or_default();
        Ok(organic
            .iter()
            .enumerate()
            .map(|(i, hit)| {
                let link = hit["link"].as_str().unwrap_or_default().to_string();
                ToolResult {
                    tool: SEARCH_TOOL.into(),
                    input: query.into(),
                    output: format!(
                        "{}\nURL: {}\n{}",
                        hit["title"].as_str().unwrap_or_default(),
                        link,
                        hit["snippet"].as_str().unwrap_or_default()
                    ),
                    source: Some(SourceDescriptor { url: link, rank: Some(i + 1) }),
                }
            })
            .collect())
    }

    fn browse(&mut self, url: &str) -> Result<ToolResult, BackendError> {
        let req = HttpRequest {
            method: "GET",
            url: format!("{}/{}", self.reader_base.trim_end_matches('/'), url),
            headers: vec![("Accept".into(), "text/plain".into())],
            body: None,
        };
        let resp = self.http.send(&req)?;
        Ok(ToolResult {
            tool: BROWSE_TOOL.into(),
            input: url.into(),
            output: resp.body,
            source: Some(SourceDescriptor { url: url.into(), rank: None }),
        })
    }
}
