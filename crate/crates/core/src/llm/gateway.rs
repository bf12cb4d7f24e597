//! Provider-neutral chat client, retry policy, rate limiting, and the
//! response log used for offline replay.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::prompts::GatewayRequest;

pub const ENV_GATEWAY_URL: &str = "LLM_GATEWAY_URL";
pub const ENV_API_KEY: &str = "LLM_API_KEY";
pub const ENV_MODEL_ID: &str = "LLM_MODEL_ID";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    /// Worth retrying: timeouts, connection resets, 429, 5xx.
    #[error("transient gateway failure: {0}")]
    Transient(String),
    #[error("gateway rejected credentials: {0}")]
    Auth(String),
    #[error("gateway misconfigured: {0}")]
    Config(String),
    #[error("gateway request failed: {0}")]
    Permanent(String),
}

impl GatewayError {
    /// Errors that make every later request fail too.
    pub fn is_fatal(&self) -> bool {
        matches!(self, GatewayError::Auth(_) | GatewayError::Config(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayResponse {
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<serde_json::Value>,
    #[serde(default)]
    pub latency_ms: u64,
}

impl GatewayResponse {
    pub fn text(raw_text: impl Into<String>) -> Self {
        Self {
            raw_text: raw_text.into(),
            usage: None,
            latency_ms: 0,
        }
    }
}

/// One blocking chat completion. Implementations are shared across worker
/// threads.
pub trait ChatClient: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &GatewayRequest) -> Result<GatewayResponse, GatewayError>;
}

impl<C: ChatClient + ?Sized> ChatClient for Arc<C> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, request: &GatewayRequest) -> Result<GatewayResponse, GatewayError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    /// Each delay is scaled by a uniform factor in `[1 - jitter, 1 + jitter]`.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
            jitter: 0.25,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            initial_backoff: Duration::ZERO,
            jitter: 0.0,
        }
    }

    /// Delay before attempt `attempt + 1`, where `attempt` starts at 1.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let base = self.initial_backoff.as_secs_f64() * 2f64.powi(attempt.saturating_sub(1) as i32);
        if base == 0.0 {
            return Duration::ZERO;
        }
        let factor = if self.jitter > 0.0 {
            rand::rng().random_range(1.0 - self.jitter..=1.0 + self.jitter)
        } else {
            1.0
        };
        Duration::from_secs_f64(base * factor)
    }
}

/// Outcome of a request after retries.
#[derive(Debug, Clone, PartialEq)]
pub struct Attempted {
    pub result: Result<GatewayResponse, GatewayError>,
    pub attempts: u32,
}

/// Retries transient failures up to the smaller of the policy's and the
/// request's attempt limits.
pub fn complete_with_retry(
    client: &dyn ChatClient,
    request: &GatewayRequest,
    policy: &RetryPolicy,
    limiter: Option<&RateLimiter>,
) -> Attempted {
    let max_attempts = policy.max_attempts.min(request.max_attempts).max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        if let Some(limiter) = limiter {
            limiter.acquire();
        }
        let result = client.complete(request);
        match &result {
            Err(GatewayError::Transient(_)) if attempt < max_attempts => {
                std::thread::sleep(policy.backoff(attempt));
            }
            _ => {
                return Attempted {
                    result,
                    attempts: attempt,
                }
            }
        }
    }
}

/// Spaces request starts at least `1 / rate` seconds apart.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    pub fn per_second(rate: f64) -> Self {
        assert!(rate > 0.0, "rate must be positive");
        Self {
            interval: Duration::from_secs_f64(1.0 / rate),
            next: Mutex::new(Instant::now()),
        }
    }

    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().expect("rate limiter lock");
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

/// Chat-completions client over HTTP.
#[derive(Debug, Clone)]
pub struct HttpChatClient {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

impl HttpChatClient {
    pub const ID: &'static str = "http";

    pub fn new(url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            url: url.into(),
            api_key,
            agent,
        }
    }

    /// Reads `LLM_GATEWAY_URL` and optional `LLM_API_KEY`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let url = std::env::var(ENV_GATEWAY_URL)
            .map_err(|_| GatewayError::Config(format!("{ENV_GATEWAY_URL} is not set")))?;
        let key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        Ok(Self::new(url, key, Duration::from_secs(120)))
    }
}

fn classify(err: ureq::Error) -> GatewayError {
    match err {
        ureq::Error::StatusCode(code @ (401 | 403)) => GatewayError::Auth(format!("HTTP {code}")),
        ureq::Error::StatusCode(code) if code == 429 || code >= 500 => GatewayError::Transient(format!("HTTP {code}")),
        ureq::Error::StatusCode(code) => GatewayError::Permanent(format!("HTTP {code}")),
        ureq::Error::BadUri(e) => GatewayError::Config(format!("bad gateway URL: {e}")),
        other @ (ureq::Error::Timeout(_)
        | ureq::Error::Io(_)
        | ureq::Error::HostNotFound
        | ureq::Error::ConnectionFailed) => GatewayError::Transient(other.to_string()),
        other => GatewayError::Permanent(other.to_string()),
    }
}

impl ChatClient for HttpChatClient {
    fn id(&self) -> &str {
        Self::ID
    }

    fn complete(&self, request: &GatewayRequest) -> Result<GatewayResponse, GatewayError> {
        let body = serde_json::json!({
            "model": request.model_id,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": 0,
        });
        let mut call = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let started = Instant::now();
        let mut response = call.send_json(&body).map_err(classify)?;
        let parsed: ChatCompletion = response
            .body_mut()
            .read_json()
            .map_err(|e| GatewayError::Permanent(format!("unreadable completion: {e}")))?;
        let raw_text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        Ok(GatewayResponse {
            raw_text,
            usage: parsed.usage,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

/// One archived response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub request_hash: String,
    pub raw_text: String,
    /// `OK`, or the error kind for failed requests.
    pub status: String,
}

/// Serves responses from a log keyed by request hash. A request missing
/// from the log is a configuration error.
#[derive(Debug, Clone, Default)]
pub struct ReplayClient {
    entries: HashMap<String, LogEntry>,
}

impl ReplayClient {
    pub const ID: &'static str = "replay";

    pub fn new(entries: impl IntoIterator<Item = LogEntry>) -> Self {
        Self {
            entries: entries.into_iter().map(|e| (e.request_hash.clone(), e)).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(
                serde_json::from_str(&line)
                    .map_err(|e| GatewayError::Config(format!("{} line {}: {e}", path.display(), i + 1)))?,
            );
        }
        Ok(Self::new(entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ChatClient for ReplayClient {
    fn id(&self) -> &str {
        Self::ID
    }

    fn complete(&self, request: &GatewayRequest) -> Result<GatewayResponse, GatewayError> {
        let hash = request.hash();
        let entry = self
            .entries
            .get(&hash)
            .ok_or_else(|| GatewayError::Config(format!("no recorded response for request {hash}")))?;
        if entry.status == "OK" {
            Ok(GatewayResponse::text(entry.raw_text.clone()))
        } else {
            Err(GatewayError::Permanent(format!("recorded failure: {}", entry.raw_text)))
        }
    }
}

/// Forwards to another client and appends each outcome to a JSONL log.
pub struct RecordingClient<C> {
    inner: C,
    log: Mutex<File>,
}

impl<C: ChatClient> RecordingClient<C> {
    pub fn new(inner: C, log_path: impl AsRef<Path>) -> std::io::Result<Self> {
        let log = OpenOptions::new().create(true).append(true).open(log_path)?;
        Ok(Self {
            inner,
            log: Mutex::new(log),
        })
    }
}

impl<C: ChatClient> ChatClient for RecordingClient<C> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &GatewayRequest) -> Result<GatewayResponse, GatewayError> {
        let result = self.inner.complete(request);
        let entry = match &result {
            Ok(response) => LogEntry {
                request_hash: request.hash(),
                raw_text: response.raw_text.clone(),
                status: "OK".into(),
            },
            Err(GatewayError::Transient(_)) => return result,
            Err(err) => LogEntry {
                request_hash: request.hash(),
                raw_text: err.to_string(),
                status: "ERROR".into(),
            },
        };
        let line = serde_json::to_string(&entry).expect("log entry serializes");
        let mut log = self.log.lock().expect("log lock");
        writeln!(log, "{line}").map_err(|e| GatewayError::Config(format!("response log: {e}")))?;
        result
    }
}

type Script = dyn Fn(&GatewayRequest, u64) -> Result<String, GatewayError> + Send + Sync;

/// Test double: answers with a closure of the request and the zero-based
/// call number.
pub struct ScriptedClient {
    script: Box<Script>,
    calls: AtomicU64,
}

impl ScriptedClient {
    pub const ID: &'static str = "scripted";

    pub fn new(script: impl Fn(&GatewayRequest, u64) -> Result<String, GatewayError> + Send + Sync + 'static) -> Self {
        Self {
            script: Box::new(script),
            calls: AtomicU64::new(0),
        }
    }

    /// Always returns the same text.
    pub fn constant(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(move |_, _| Ok(text.clone()))
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatClient for ScriptedClient {
    fn id(&self) -> &str {
        Self::ID
    }

    fn complete(&self, request: &GatewayRequest) -> Result<GatewayResponse, GatewayError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        (self.script)(request, n).map(GatewayResponse::text)
    }
}
