//! Completion clients: the OpenAI-compatible SSE client and the scripted
//! stub used for offline, deterministic runs.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EndpointError {
    #[error("http error: {0}")]
    Http(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: &str) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }
    pub fn user(content: &str) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
    pub fn assistant(content: &str) -> Self {
        Self {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub max_tokens: u64,
    /// The final assistant message is a partial response to continue verbatim.
    pub continue_assistant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamItem {
    Delta(String),
    Done { usage: Option<u64> },
}

pub type DeltaStream<'a> = Box<dyn Iterator<Item = Result<StreamItem, EndpointError>> + Send + 'a>;

/// A streaming chat-completion endpoint. Implementations must be usable
/// from concurrent tasks.
pub trait CompletionClient: Send + Sync {
    fn stream_chat(&self, req: &CompletionRequest) -> Result<DeltaStream<'_>, EndpointError>;
}

// ---------------------------------------------------------------------------
// Scripted stub

/// On-disk stub script: `default` is used when no `responses` key is
/// contained in the last user message.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StubScript {
    #[serde(default)]
    pub default: Option<String>,
    #[serde(default)]
    pub responses: Vec<StubResponse>,
    #[serde(default = "default_chunk_chars")]
    pub chunk_chars: usize,
    #[serde(default)]
    pub repeat: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StubResponse {
    /// Matched by substring against the last user message.
    pub key: String,
    pub text: String,
}

fn default_chunk_chars() -> usize {
    16
}

/// Deterministic stub endpoint. Continuation requests resume the selected
/// script after the assistant-prefix already generated.
#[derive(Debug, Clone)]
pub struct ScriptedStub {
    script: StubScript,
}

impl ScriptedStub {
    pub fn new(script: StubScript) -> Self {
        Self { script }
    }

    pub fn single(text: &str, chunk_chars: usize) -> Self {
        Self::new(StubScript {
            default: Some(text.into()),
            responses: Vec::new(),
            chunk_chars,
            repeat: false,
        })
    }

    /// Repeats `unit` forever; used to exercise budget clamps.
    pub fn endless(unit: &str, chunk_chars: usize) -> Self {
        Self::new(StubScript {
            default: Some(unit.into()),
            responses: Vec::new(),
            chunk_chars,
            repeat: true,
        })
    }

    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let script: StubScript = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok(Self::new(script))
    }

    fn select(&self, req: &CompletionRequest) -> Result<String, EndpointError> {
        let last_user = req
            .messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("");
        for r in &self.script.responses {
            if last_user.contains(&r.key) {
                return Ok(r.text.clone());
            }
        }
        self.script
            .default
            .clone()
            .ok_or_else(|| EndpointError::Protocol("no stub script matches the request".into()))
    }
}

fn chunk_chars(text: &str, size: usize) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    chars
        .chunks(size.max(1))
        .map(|c| c.iter().collect())
        .collect()
}

struct EndlessChunks {
    unit: Vec<char>,
    pos: usize,
    size: usize,
}

impl Iterator for EndlessChunks {
    type Item = Result<StreamItem, EndpointError>;
    fn next(&mut self) -> Option<Self::Item> {
        let mut chunk = String::with_capacity(self.size);
        for _ in 0..self.size {
            chunk.push(self.unit[self.pos % self.unit.len()]);
            self.pos += 1;
        }
        Some(Ok(StreamItem::Delta(chunk)))
    }
}

impl CompletionClient for ScriptedStub {
    fn stream_chat(&self, req: &CompletionRequest) -> Result<DeltaStream<'_>, EndpointError> {
        let script = self.select(req)?;
        let prefix = req
            .messages
            .last()
            .filter(|m| m.role == "assistant")
            .map(|m| m.content.as_str())
            .unwrap_or("");
        if self.script.repeat {
            if script.is_empty() {
                return Err(EndpointError::Protocol("empty repeating script".into()));
            }
            return Ok(Box::new(EndlessChunks {
                pos: prefix.chars().count() % script.chars().count(),
                unit: script.chars().collect(),
                size: self.script.chunk_chars.max(1),
            }));
        }
        let remainder = script.strip_prefix(prefix).unwrap_or("").to_string();
        let chunks = chunk_chars(&remainder, self.script.chunk_chars);
        Ok(Box::new(
            chunks
                .into_iter()
                .map(|c| Ok(StreamItem::Delta(c)))
                .chain(std::iter::once(Ok(StreamItem::Done { usage: None }))),
        ))
    }
}

// ---------------------------------------------------------------------------
// OpenAI-compatible HTTP client

/// Blocking SSE client for `/chat/completions` on an OpenAI-compatible server.
pub struct OpenAiClient {
    base_url: String,
    model: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl OpenAiClient {
    /// `base_url` should include the API version prefix, e.g.
    /// `https://openrouter.ai/api/v1`. The key is read from `api_key_env`.
    pub fn new(base_url: &str, model: &str, api_key_env: Option<&str>) -> Self {
        let api_key = api_key_env.and_then(|v| std::env::var(v).ok());
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            http: reqwest::blocking::Client::new(),
        }
    }
}

impl CompletionClient for OpenAiClient {
    fn stream_chat(&self, req: &CompletionRequest) -> Result<DeltaStream<'_>, EndpointError> {
        let url = format!("{}/chat/completions", self.base_url);
        let mut body = serde_json::json!({
            "model": self.model,
            "messages": req.messages,
            "temperature": req.temperature,
            "top_p": req.top_p,
            "top_k": req.top_k,
            "max_tokens": req.max_tokens,
            "stream": true,
            "stream_options": {"include_usage": true},
        });
        if req.continue_assistant {
            // vLLM-style raw continuation of the final assistant message
            body["continue_final_message"] = serde_json::json!(true);
            body["add_generation_prompt"] = serde_json::json!(false);
        }
        let mut builder = self.http.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| EndpointError::Http(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(EndpointError::Http(format!(
                "status {} from {url}",
                resp.status()
            )));
        }
        Ok(Box::new(SseStream {
            reader: BufReader::new(resp),
            done: false,
            usage: None,
        }))
    }
}

struct SseStream {
    reader: BufReader<reqwest::blocking::Response>,
    done: bool,
    usage: Option<u64>,
}

impl Iterator for SseStream {
    type Item = Result<StreamItem, EndpointError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            let mut line = String::new();
            match self.reader.read_line(&mut line) {
                Ok(0) => {
                    self.done = true;
                    return Some(Ok(StreamItem::Done { usage: self.usage }));
                }
                Ok(_) => {}
                Err(e) => {
                    self.done = true;
                    return Some(Err(EndpointError::Http(e.to_string())));
                }
            }
            let line = line.trim();
            let Some(data) = line.strip_prefix("data:") else {
                continue;
            };
            let data = data.trim();
            if data == "[DONE]" {
                self.done = true;
                return Some(Ok(StreamItem::Done { usage: self.usage }));
            }
            let value: serde_json::Value = match serde_json::from_str(data) {
                Ok(v) => v,
                Err(e) => {
                    self.done = true;
                    return Some(Err(EndpointError::Protocol(format!(
                        "bad SSE payload: {e}"
                    ))));
                }
            };
            if let Some(u) = value["usage"]["completion_tokens"].as_u64() {
                self.usage = Some(u);
            }
            if let Some(delta) = value["choices"][0]["delta"]["content"].as_str() {
                if !delta.is_empty() {
                    return Some(Ok(StreamItem::Delta(delta.to_string())));
                }
            }
        }
    }
}
