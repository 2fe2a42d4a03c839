//! Chat-completion backends and response parsing.
//!
//! [`HttpBackend`] speaks the OpenAI-compatible `/chat/completions` shape;
//! [`MockBackend`] replays scripted responses so that whole pipeline runs
//! are reproducible offline.

use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::IssueCategory;
use crate::pipeline::{CandidateComment, CandidateSource};
use crate::prompts::{Message, Role};

pub const API_KEY_ENV: &str = "REVAGENT_API_KEY";
pub const DEFAULT_MAX_TOKENS: u32 = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerdictError {
    #[error("could not extract a selected category from critic response: {0:?}")]
    UnparseableVerdict(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_name: String,
}

impl GenerationRequest {
    /// Greedy decoding with the default output budget.
    pub fn new(model_name: impl Into<String>, messages: Vec<Message>) -> Self {
        GenerationRequest { messages, temperature: 0.0, max_tokens: DEFAULT_MAX_TOKENS, model_name: model_name.into() }
    }

    pub fn prompt_text(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenSource {
    Reported,
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_seconds: f64,
    pub token_source: TokenSource,
}

/// ceil(chars / 4).
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 2, base_backoff_ms: 500 }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.base_backoff_ms.saturating_mul(1u64 << attempt.min(16)))
    }
}

enum Attempt<T> {
    Done(T),
    Retry(String),
    Fatal(BackendError),
}

/// Run `op` until it succeeds, fails fatally, or `max_retries` retries are
/// spent. Waits base * 2^k between attempts.
fn with_retries<T>(policy: RetryPolicy, mut op: impl FnMut() -> Attempt<T>) -> Result<T, BackendError> {
    let mut attempt = 0;
    loop {
        match op() {
            Attempt::Done(v) => return Ok(v),
            Attempt::Fatal(e) => return Err(e),
            Attempt::Retry(message) => {
                if attempt >= policy.max_retries {
                    return Err(BackendError::Transport { attempts: attempt + 1, message });
                }
                thread::sleep(policy.backoff(attempt));
                attempt += 1;
            }
        }
    }
}

/// Token bucket shared by every caller of a backend handle.
#[derive(Debug)]
pub struct RateLimiter {
    per_second: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(per_second: f64) -> Self {
        let capacity = per_second.max(1.0);
        RateLimiter { per_second, capacity, state: Mutex::new((capacity, Instant::now())) }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
                let now = Instant::now();
                let refill = now.duration_since(state.1).as_secs_f64() * self.per_second;
                state.0 = (state.0 + refill).min(self.capacity);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                (1.0 - state.0) / self.per_second
            };
            thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

/// Client for any server exposing `POST <endpoint>/chat/completions`.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    limiter: Option<RateLimiter>,
}

impl HttpBackend {
    pub fn new(endpoint: &str, api_key: Option<String>, retry: RetryPolicy) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| BackendError::Transport { attempts: 0, message: e.to_string() })?;
        Ok(HttpBackend {
            client,
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key: api_key.filter(|k| !k.is_empty()),
            retry,
            limiter: None,
        })
    }

    /// Same as [`HttpBackend::new`] with the key read from `REVAGENT_API_KEY`.
    pub fn from_env(endpoint: &str, retry: RetryPolicy) -> Result<Self, BackendError> {
        Self::new(endpoint, std::env::var(API_KEY_ENV).ok(), retry)
    }

    pub fn with_rate_limit(mut self, requests_per_second: f64) -> Self {
        if requests_per_second > 0.0 {
            self.limiter = Some(RateLimiter::new(requests_per_second));
        }
        self
    }

    fn attempt(&self, body: &WireRequest<'_>) -> Attempt<(String, Option<WireUsage>)> {
        if let Some(limiter) = &self.limiter {
            limiter.acquire();
        }
        let mut req = self.client.post(format!("{}/chat/completions", self.endpoint)).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Attempt::Fatal(BackendError::Auth(format!("HTTP {status}: {text}")));
        }
        if status.is_server_error() || status.as_u16() == 429 {
            return Attempt::Retry(format!("HTTP {status}: {text}"));
        }
        if !status.is_success() {
            return Attempt::Fatal(BackendError::Transport { attempts: 1, message: format!("HTTP {status}: {text}") });
        }
        let parsed: WireResponse = match serde_json::from_str(&text) {
            Ok(p) => p,
            Err(e) => return Attempt::Fatal(BackendError::MalformedResponse(e.to_string())),
        };
        let Some(content) = parsed.choices.into_iter().next().and_then(|c| c.message.content) else {
            return Attempt::Fatal(BackendError::MalformedResponse("no choices[0].message.content".into()));
        };
        Attempt::Done((content, parsed.usage))
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        let body = WireRequest {
            model: &request.model_name,
            messages: request
                .messages
                .iter()
                .map(|m| WireMessage {
                    role: match m.role {
                        Role::System => "system",
                        Role::User => "user",
                    },
                    content: &m.content,
                })
                .collect(),
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let started = Instant::now();
        let (text, usage) = with_retries(self.retry, || self.attempt(&body))?;
        let latency_seconds = started.elapsed().as_secs_f64();
        let reported = usage.and_then(|u| Some((u.prompt_tokens?, u.completion_tokens?)));
        let (prompt_tokens, completion_tokens, token_source) = match reported {
            Some((p, c)) => (p, c, TokenSource::Reported),
            None => (estimate_tokens(&request.prompt_text()), estimate_tokens(&text), TokenSource::Estimated),
        };
        Ok(GenerationResult { text, prompt_tokens, completion_tokens, latency_seconds, token_source })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockFailure {
    Transport,
    Auth,
    Malformed,
}

/// One scripted response. The first entry whose `prompt_substring_match`
/// occurs in the prompt answers; an empty match string matches anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockEntry {
    pub prompt_substring_match: String,
    #[serde(default)]
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
    /// Latency reported in the result. Not measured, so runs stay bitwise
    /// reproducible.
    #[serde(default)]
    pub latency_seconds: f64,
    /// Real delay before answering; perturbs completion order in tests.
    #[serde(default)]
    pub sleep_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<MockFailure>,
}

impl MockEntry {
    pub fn new(matcher: impl Into<String>, response: impl Into<String>) -> Self {
        MockEntry {
            prompt_substring_match: matcher.into(),
            response: response.into(),
            model: None,
            prompt_tokens: None,
            completion_tokens: None,
            latency_seconds: 0.0,
            sleep_ms: 0,
            error: None,
        }
    }

    pub fn with_usage(mut self, prompt_tokens: u64, completion_tokens: u64) -> Self {
        self.prompt_tokens = Some(prompt_tokens);
        self.completion_tokens = Some(completion_tokens);
        self
    }

    pub fn with_latency(mut self, seconds: f64) -> Self {
        self.latency_seconds = seconds;
        self
    }

    pub fn for_model(mut self, model: impl Into<String>) -> Self {
        self.model = Some(model.into());
        self
    }

    pub fn failing(mut self, failure: MockFailure) -> Self {
        self.error = Some(failure);
        self
    }
}

/// Scripted backend. Counts calls so tests can assert on them.
#[derive(Debug, Default)]
pub struct MockBackend {
    entries: Vec<MockEntry>,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(entries: Vec<MockEntry>) -> Self {
        MockBackend { entries, calls: AtomicUsize::new(0) }
    }

    /// Backend that answers every prompt with `response`.
    pub fn constant(response: impl Into<String>) -> Self {
        Self::new(vec![MockEntry::new("", response)])
    }

    /// Read a JSONL script of [`MockEntry`] objects.
    pub fn from_script(path: impl AsRef<Path>) -> io::Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut entries = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn entries(&self) -> &[MockEntry] {
        &self.entries
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let prompt = request.prompt_text();
        let entry = self
            .entries
            .iter()
            .filter(|e| e.model.as_deref().is_none_or(|m| m == request.model_name))
            .find(|e| prompt.contains(&e.prompt_substring_match))
            .ok_or_else(|| BackendError::MalformedResponse("no mock script entry matches the prompt".into()))?;
        if entry.sleep_ms > 0 {
            thread::sleep(Duration::from_millis(entry.sleep_ms));
        }
        match entry.error {
            Some(MockFailure::Transport) => {
                return Err(BackendError::Transport { attempts: 1, message: "scripted transport failure".into() })
            }
            Some(MockFailure::Auth) => return Err(BackendError::Auth("scripted auth failure".into())),
            Some(MockFailure::Malformed) => {
                return Err(BackendError::MalformedResponse("scripted malformed response".into()))
            }
            None => {}
        }
        let (prompt_tokens, completion_tokens, token_source) = match (entry.prompt_tokens, entry.completion_tokens) {
            (Some(p), Some(c)) => (p, c, TokenSource::Reported),
            _ => (estimate_tokens(&prompt), estimate_tokens(&entry.response), TokenSource::Estimated),
        };
        Ok(GenerationResult {
            text: entry.response.clone(),
            prompt_tokens,
            completion_tokens,
            latency_seconds: entry.latency_seconds,
            token_source,
        })
    }
}

/// Byte offset of the first ASCII-case-insensitive occurrence of `needle`
/// (which must be ASCII).
fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    let (h, n) = (haystack.as_bytes(), needle.as_bytes());
    if n.is_empty() || h.len() < n.len() {
        return None;
    }
    (0..=h.len() - n.len()).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

const REVIEW_MARKER: &str = "review comment:";
const SELECTION_MARKER: &str = "selected category";

pub fn sentinel_text(category: IssueCategory) -> String {
    format!("No revision needed from the {} perspective.", category.name())
}

fn is_decline(text: &str) -> bool {
    let normalized = text
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    if normalized.is_empty() {
        return true;
    }
    const EXACT: [&str; 8] = ["false", "no", "none", "n/a", "na", "no issues", "no issues found", "nothing to review"];
    if EXACT.contains(&normalized.as_str()) {
        return true;
    }
    let first_word_false = normalized
        .strip_prefix("false")
        .is_some_and(|rest| rest.starts_with(|c: char| !c.is_alphanumeric()));
    first_word_false || normalized.starts_with("no revision")
}

/// Extract the comment after the first "Review Comment:" marker. Without a
/// marker the whole text is used and the candidate is flagged lenient. An
/// empty extraction or an explicit decline yields the sentinel candidate.
pub fn parse_commentator_response(text: &str, category: IssueCategory) -> CandidateComment {
    let (extracted, lenient) = match find_ci(text, REVIEW_MARKER) {
        Some(at) => (text[at + REVIEW_MARKER.len()..].trim(), false),
        None => (text.trim(), true),
    };
    if is_decline(extracted) {
        return CandidateComment::sentinel(category);
    }
    let mut candidate = CandidateComment::new(category, extracted, CandidateSource::Generated);
    candidate.lenient = lenient;
    candidate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticVerdict {
    /// `None` only for merge-mode verdicts, which select no category.
    pub category: Option<IssueCategory>,
    pub comment: String,
    pub raw_response: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
}

fn categories_named(line: &str) -> Vec<IssueCategory> {
    let mut found: Vec<IssueCategory> = line
        .split(|c: char| !c.is_alphanumeric())
        .filter_map(|w| w.parse::<IssueCategory>().ok())
        .filter(|c| !c.is_others())
        .collect();
    found.sort();
    found.dedup();
    found
}

/// Read the "Selected Category:" line and the following "Review Comment:".
/// Exactly one category name must appear on the selection line. A missing
/// or empty comment is replaced by the selected candidate's text.
pub fn parse_critic_response(text: &str, candidates: &[CandidateComment]) -> Result<CriticVerdict, VerdictError> {
    let unparseable = || VerdictError::UnparseableVerdict(text.chars().take(200).collect());
    let at = find_ci(text, SELECTION_MARKER).ok_or_else(unparseable)?;
    let after = &text[at + SELECTION_MARKER.len()..];
    let line_end = after.find('\n').unwrap_or(after.len());
    let names = categories_named(&after[..line_end]);
    let [category] = names[..] else {
        return Err(unparseable());
    };
    let rest = &after[line_end..];
    let comment = find_ci(rest, REVIEW_MARKER)
        .map(|i| rest[i + REVIEW_MARKER.len()..].trim())
        .filter(|c| !c.is_empty());
    let comment = match comment {
        Some(c) => c.to_string(),
        None => candidates
            .iter()
            .find(|c| c.category == category)
            .map(|c| c.text.clone())
            .ok_or_else(unparseable)?,
    };
    Ok(CriticVerdict { category: Some(category), comment, raw_response: text.to_string(), fallback: false })
}

/// Merge-mode critic output: the comment after the marker, or the whole
/// trimmed response.
pub fn parse_merge_response(text: &str) -> CriticVerdict {
    let comment = match find_ci(text, REVIEW_MARKER) {
        Some(at) => text[at + REVIEW_MARKER.len()..].trim(),
        None => text.trim(),
    };
    CriticVerdict { category: None, comment: comment.to_string(), raw_response: text.to_string(), fallback: false }
}
