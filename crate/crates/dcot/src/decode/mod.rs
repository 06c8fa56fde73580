//! Streaming decode orchestration in Locked or Dynamic temperature mode.
//!
//! Dynamic mode ends the current request at each control-tag boundary and
//! issues a continuation request (generated text so far appended as
//! assistant-prefix context) with the temperature mapped to the new tag.
//! The tag literal itself is generated under the previous temperature; the
//! switch applies from the first token after the tag.

pub mod client;

use crate::tagparse::{self, TaggedSegment, ThinkingMode, TAG_HIGH, TAG_LOW, TAG_MID};
use client::{ChatMessage, CompletionClient, CompletionRequest, StreamItem};
use serde::{Deserialize, Serialize};
use std::time::Duration;
use thiserror::Error;

pub const RETRY_ATTEMPTS: u32 = 3;
const RETRY_BASE_BACKOFF_MS: u64 = 100;

/// Default per-benchmark token budgets.
pub const BUDGET_MMLU_PRO: u64 = 2_048;
/// Kept verbatim from the reference setup even though 8,192 was likely intended.
pub const BUDGET_GPQA: u64 = 8_196;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid sampling policy: {0}")]
    InvalidPolicy(String),
    #[error("no token counter available (endpoint reported no usage and no local counter is configured)")]
    CounterUnavailable,
}

/// Per-mode temperature map. Total over `ThinkingMode` by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TempMap {
    pub default: f64,
    pub low: f64,
    pub mid: f64,
    pub high: f64,
}

impl Default for TempMap {
    fn default() -> Self {
        Self {
            default: 0.6,
            low: 0.3,
            mid: 0.6,
            high: 0.8,
        }
    }
}

impl TempMap {
    pub fn get(&self, mode: ThinkingMode) -> f64 {
        match mode {
            ThinkingMode::Default => self.default,
            ThinkingMode::Low => self.low,
            ThinkingMode::Mid => self.mid,
            ThinkingMode::High => self.high,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TempMode {
    Locked,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingPolicy {
    pub mode: TempMode,
    pub locked_temperature: f64,
    pub temp_map: TempMap,
    pub top_p: f64,
    pub top_k: u32,
    pub max_output_tokens: u64,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self {
            mode: TempMode::Locked,
            locked_temperature: 0.6,
            temp_map: TempMap::default(),
            top_p: 0.95,
            top_k: 20,
            max_output_tokens: BUDGET_MMLU_PRO,
        }
    }
}

impl SamplingPolicy {
    /// Greedy decoding is forbidden: every temperature must be positive.
    pub fn validate(&self) -> Result<(), DecodeError> {
        let temps = [
            self.locked_temperature,
            self.temp_map.default,
            self.temp_map.low,
            self.temp_map.mid,
            self.temp_map.high,
        ];
        if temps.iter().any(|t| !(*t > 0.0)) {
            return Err(DecodeError::InvalidPolicy(
                "all temperatures must be > 0".into(),
            ));
        }
        if self.max_output_tokens == 0 {
            return Err(DecodeError::InvalidPolicy(
                "max_output_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Local token counter used for budget enforcement and metrics when the
/// endpoint does not report usage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenCounter {
    /// Whitespace tokenization; approximate, and labeled so in reports.
    Whitespace,
    /// No local counter; endpoint usage is required.
    None,
}

pub fn count_tokens(text: &str, counter: TokenCounter) -> Result<u64, DecodeError> {
    match counter {
        TokenCounter::Whitespace => Ok(text.split_whitespace().count() as u64),
        TokenCounter::None => Err(DecodeError::CounterUnavailable),
    }
}

/// Endpoint-reported usage wins over local counting.
pub fn resolve_tokens(
    usage: Option<u64>,
    text: &str,
    counter: TokenCounter,
) -> Result<u64, DecodeError> {
    match usage {
        Some(u) => Ok(u),
        None => count_tokens(text, counter),
    }
}

/// Keep the prefix of `text` covering exactly the first `n` whitespace tokens.
fn trim_to_tokens(text: &str, n: u64) -> String {
    if n == 0 {
        return String::new();
    }
    let mut tokens_seen = 0u64;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_token {
                tokens_seen += 1;
                if tokens_seen == n {
                    return text[..i].to_string();
                }
                in_token = false;
            }
        } else {
            in_token = true;
        }
    }
    text.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FinishReason {
    Stop,
    Budget,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub temperature: f64,
    /// Chars of assistant-prefix context carried into this request.
    pub prompt_suffix_len: usize,
    pub tokens_generated: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTranscript {
    pub text: String,
    pub segments: Vec<TaggedSegment>,
    pub requests: Vec<RequestRecord>,
    pub total_tokens: u64,
    pub truncated: bool,
    pub finish_reason: FinishReason,
    pub error: Option<String>,
}

/// Earliest complete control tag in `text`, as (end byte offset, mode).
fn first_control_tag(text: &str) -> Option<(usize, ThinkingMode)> {
    let mut best: Option<(usize, usize, ThinkingMode)> = None;
    for (lit, mode) in [
        (TAG_LOW, ThinkingMode::Low),
        (TAG_MID, ThinkingMode::Mid),
        (TAG_HIGH, ThinkingMode::High),
    ] {
        if let Some(pos) = text.find(lit) {
            if best.map_or(true, |(p, _, _)| pos < p) {
                best = Some((pos, pos + lit.len(), mode));
            }
        }
    }
    best.map(|(_, end, mode)| (end, mode))
}

enum RequestEnd {
    Natural { usage: Option<u64> },
    TagBoundary(ThinkingMode),
    BudgetHit,
    Failed(String),
}

/// Drive one decode to completion against the endpoint.
pub fn decode(
    prompt: &[ChatMessage],
    policy: &SamplingPolicy,
    endpoint: &dyn CompletionClient,
    counter: TokenCounter,
) -> Result<DecodeTranscript, DecodeError> {
    policy.validate()?;
    let mut text = String::new();
    let mut requests: Vec<RequestRecord> = Vec::new();
    let mut total_tokens = 0u64;
    let mut truncated = false;
    let mut error = None;
    let mut next_temp = match policy.mode {
        TempMode::Locked => policy.locked_temperature,
        TempMode::Dynamic => policy.temp_map.default,
    };

    let finish_reason = 'outer: loop {
        let prefix_len = text.chars().count();
        let mut messages = prompt.to_vec();
        if !text.is_empty() {
            messages.push(ChatMessage::assistant(&text));
        }
        let req = CompletionRequest {
            messages,
            temperature: next_temp,
            top_p: policy.top_p,
            top_k: policy.top_k,
            max_tokens: policy.max_output_tokens,
            continue_assistant: !text.is_empty(),
        };

        let budget_left = policy.max_output_tokens - total_tokens;
        let (req_text, end) = run_request(&req, endpoint, counter, policy.mode, budget_left)?;
        match end {
            RequestEnd::Failed(msg) => {
                // retried attempts resend identical context; on final
                // failure the failed attempt's partial output is dropped
                error = Some(msg);
                break 'outer FinishReason::Error;
            }
            _ => {
                let usage = match &end {
                    RequestEnd::Natural { usage } => *usage,
                    _ => None,
                };
                let tokens = resolve_tokens(usage, &req_text, counter)?;
                requests.push(RequestRecord {
                    temperature: next_temp,
                    prompt_suffix_len: prefix_len,
                    tokens_generated: tokens,
                });
                total_tokens += tokens;
                text.push_str(&req_text);
                match end {
                    RequestEnd::Natural { .. } => break 'outer FinishReason::Stop,
                    RequestEnd::BudgetHit => {
                        truncated = true;
                        break 'outer FinishReason::Budget;
                    }
                    RequestEnd::TagBoundary(mode) => {
                        if total_tokens >= policy.max_output_tokens {
                            truncated = true;
                            break 'outer FinishReason::Budget;
                        }
                        next_temp = policy.temp_map.get(mode);
                        if req_text.is_empty() {
                            // defensive: no forward progress
                            break 'outer FinishReason::Stop;
                        }
                    }
                    RequestEnd::Failed(_) => unreachable!(),
                }
            }
        }
    };

    let mut segments = tagparse::segment(&text);
    for seg in &mut segments {
        seg.token_count = count_tokens(&seg.text, counter).unwrap_or(0) as usize;
    }
    Ok(DecodeTranscript {
        text,
        segments,
        requests,
        total_tokens,
        truncated,
        finish_reason,
        error,
    })
}

/// Run one endpoint request with retries; returns the text kept from this
/// request and why it ended.
fn run_request(
    req: &CompletionRequest,
    endpoint: &dyn CompletionClient,
    counter: TokenCounter,
    mode: TempMode,
    budget_left: u64,
) -> Result<(String, RequestEnd), DecodeError> {
    let mut last_err = String::new();
    for attempt in 0..RETRY_ATTEMPTS {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(
                RETRY_BASE_BACKOFF_MS << (attempt - 1),
            ));
        }
        match stream_once(req, endpoint, counter, mode, budget_left) {
            Ok(outcome) => return Ok(outcome),
            Err(msg) => last_err = msg,
        }
    }
    Ok((String::new(), RequestEnd::Failed(last_err)))
}

fn stream_once(
    req: &CompletionRequest,
    endpoint: &dyn CompletionClient,
    counter: TokenCounter,
    mode: TempMode,
    budget_left: u64,
) -> Result<(String, RequestEnd), String> {
    let stream = endpoint.stream_chat(req).map_err(|e| e.to_string())?;
    let mut req_text = String::new();
    for item in stream {
        match item.map_err(|e| e.to_string())? {
            StreamItem::Delta(delta) => {
                req_text.push_str(&delta);
                if mode == TempMode::Dynamic {
                    if let Some((end, tag_mode)) = first_control_tag(&req_text) {
                        req_text.truncate(end);
                        if let Some(over) = over_budget(&req_text, counter, budget_left) {
                            return Ok((over, RequestEnd::BudgetHit));
                        }
                        return Ok((req_text, RequestEnd::TagBoundary(tag_mode)));
                    }
                }
                if let Some(over) = over_budget(&req_text, counter, budget_left) {
                    return Ok((over, RequestEnd::BudgetHit));
                }
            }
            StreamItem::Done { usage } => {
                return Ok((req_text, RequestEnd::Natural { usage }));
            }
        }
    }
    // stream ended without a Done marker; treat as natural stop
    Ok((req_text, RequestEnd::Natural { usage: None }))
}

/// If `text` exceeds the remaining budget, the trimmed text that lands
/// exactly on the budget.
fn over_budget(text: &str, counter: TokenCounter, budget_left: u64) -> Option<String> {
    let count = count_tokens(text, counter).ok()?;
    if count > budget_left {
        Some(trim_to_tokens(text, budget_left))
    } else {
        None
    }
}
