//! Completion backends: a uniform contract over live HTTP, rule-based mock,
//! and record/replay implementations.
//!
//! All labeling traffic goes through [`Client::complete`], which enforces the
//! decoding defaults (temperature 0.0, short continuations), bounded
//! parallelism, retry with exponential backoff, and optional recording of
//! responses for later replay. Mock and replay backends are fully
//! deterministic, which is what makes end-to-end runs reproducible.

mod http;
mod mock;
mod replay;

pub use mock::MockRule;
pub use replay::{CacheEntry, ResponseCache};

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::FingerprintBuilder;

/// Default token budget for label completions; codes are single tokens or
/// short words, so anything longer is rambling.
pub const DEFAULT_MAX_TOKENS: u32 = 16;
/// Larger token budget for translation requests.
pub const TRANSLATION_MAX_TOKENS: u32 = 128;

/// One completion request at fixed decoding settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt_text: String,
    /// Defaults to 0.0 (greedy decoding); the experiment runner never
    /// overrides it unless explicitly configured.
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop_sequences: Vec<String>,
}

impl CompletionRequest {
    /// Request shape for label completions: greedy, short, stop at newline.
    pub fn for_label(prompt_text: impl Into<String>) -> Self {
        Self {
            prompt_text: prompt_text.into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            stop_sequences: vec!["\n".into()],
        }
    }

    /// Request shape for translation: same settings, larger budget.
    pub fn for_translation(prompt_text: impl Into<String>) -> Self {
        Self {
            max_tokens: TRANSLATION_MAX_TOKENS,
            ..Self::for_label(prompt_text)
        }
    }

    /// Cache/replay key: model id plus every decoding-relevant field.
    pub fn fingerprint(&self, model_id: &str) -> String {
        FingerprintBuilder::new("completion-request")
            .field("model", model_id)
            .field("prompt", &self.prompt_text)
            .field_f64("temperature", self.temperature)
            .field_u64("max_tokens", self.max_tokens as u64)
            .field_list("stop", &self.stop_sequences)
            .finish()
    }
}

/// A backend's continuation plus transport metadata.
#[derive(Debug, Clone)]
pub struct CompletionResponse {
    pub text: String,
    pub model_id: String,
    pub latency: Duration,
    pub attempt_count: u32,
}

/// Which backend implementation to construct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
    Replay,
}

/// Retry behavior for transient failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the first retry; retry k waits `base_backoff * 2^(k-1)`.
    #[serde(rename = "base_backoff_ms", with = "duration_ms")]
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_backoff: Duration::from_millis(250) }
    }
}

mod duration_ms {
    use super::Duration;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

fn default_max_parallel() -> usize {
    4
}

fn default_timeout_ms() -> u64 {
    30_000
}

/// Backend configuration as it appears in plan files and CLI flags.
///
/// Credentials are referenced by environment variable name only; the secret
/// itself is resolved at client construction and never serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model_id: String,
    /// Completions endpoint URL (http backend).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API credential.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Replay source: an append-only cache of recorded responses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,
    /// When set, successful completions are recorded here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_to: Option<PathBuf>,
    /// Mock backend rule table, applied in order; first match wins.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<MockRule>,
    /// Mock backend response when no rule matches.
    #[serde(default)]
    pub default_response: String,
}

impl BackendConfig {
    pub fn mock(model_id: impl Into<String>, rules: Vec<MockRule>, default_response: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Mock,
            model_id: model_id.into(),
            endpoint: None,
            auth_env: None,
            max_parallel: default_max_parallel(),
            retry: RetryPolicy::default(),
            timeout_ms: default_timeout_ms(),
            cache_path: None,
            record_to: None,
            rules,
            default_response: default_response.into(),
        }
    }

    pub fn replay(model_id: impl Into<String>, cache_path: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Replay,
            cache_path: Some(cache_path.into()),
            ..Self::mock(model_id, Vec::new(), "")
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("rate limited by backend (HTTP {status})")]
    RateLimited { status: u16 },
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("could not parse backend response: {0}")]
    MalformedResponse(String),
    #[error("no recorded response for request fingerprint {fingerprint}")]
    ReplayMiss { fingerprint: String },
    #[error("retries exhausted after {attempts} attempt(s): {last}")]
    RetriesExhausted { attempts: u32, last: Box<BackendError> },
    #[error("response cache error: {0}")]
    Cache(String),
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
}

impl BackendError {
    /// Transient failures worth retrying; everything else surfaces at once.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::RateLimited { .. } | BackendError::Timeout | BackendError::Transport(_) => true,
            BackendError::Http { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

/// One transport attempt. Implementations must be safe for concurrent calls.
pub trait Transport: Send + Sync {
    fn call(&self, request: &CompletionRequest) -> Result<String, BackendError>;

    /// Whether a call counts against live-backend usage (replay does not).
    fn is_live(&self) -> bool {
        true
    }
}

/// Completion client: one transport behind retry, bounded parallelism, and
/// optional response recording.
pub struct Client {
    transport: Box<dyn Transport>,
    model_id: String,
    retry: RetryPolicy,
    limiter: Limiter,
    max_parallel: usize,
    recorder: Option<Mutex<ResponseCache>>,
    live_calls: AtomicU64,
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Client")
            .field("model_id", &self.model_id)
            .field("max_parallel", &self.max_parallel)
            .field("retry", &self.retry)
            .finish_non_exhaustive()
    }
}

impl Client {
    /// Builds the backend named by `config`.
    pub fn from_config(config: &BackendConfig) -> Result<Self, BackendError> {
        let transport: Box<dyn Transport> = match config.kind {
            BackendKind::Http => Box::new(http::HttpTransport::from_config(config)?),
            BackendKind::Mock => Box::new(mock::MockTransport::new(
                config.rules.clone(),
                config.default_response.clone(),
            )),
            BackendKind::Replay => {
                let path = config.cache_path.as_ref().ok_or_else(|| {
                    BackendError::InvalidConfig("replay backend requires cache_path".into())
                })?;
                Box::new(replay::ReplayTransport::new(
                    ResponseCache::load(path)?,
                    config.model_id.clone(),
                ))
            }
        };
        let mut client = Self::with_transport(
            transport,
            config.model_id.clone(),
            config.retry.clone(),
            config.max_parallel,
        );
        if let Some(path) = &config.record_to {
            client = client.recording_to(path)?;
        }
        Ok(client)
    }

    /// Wraps an arbitrary transport; used by tests and custom backends.
    pub fn with_transport(
        transport: Box<dyn Transport>,
        model_id: impl Into<String>,
        retry: RetryPolicy,
        max_parallel: usize,
    ) -> Self {
        let max_parallel = max_parallel.max(1);
        Self {
            transport,
            model_id: model_id.into(),
            retry,
            limiter: Limiter::new(max_parallel),
            max_parallel,
            recorder: None,
            live_calls: AtomicU64::new(0),
        }
    }

    /// Records every successful completion to an append-only cache file.
    pub fn recording_to(mut self, path: impl Into<PathBuf>) -> Result<Self, BackendError> {
        self.recorder = Some(Mutex::new(ResponseCache::open_for_append(path.into())?));
        Ok(self)
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    /// Upper bound on in-flight requests; batch layers size their pools on it.
    pub fn max_parallel(&self) -> usize {
        self.max_parallel
    }

    /// Number of transport calls that reached a live backend (replay hits
    /// excluded; every retry attempt counts).
    pub fn live_calls(&self) -> u64 {
        self.live_calls.load(Ordering::SeqCst)
    }

    /// Obtains a completion, retrying transient failures with exponential
    /// backoff. At most `max_parallel` requests are in flight per client at
    /// any instant, regardless of how many threads call in.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let _permit = self.limiter.acquire();
        let start = Instant::now();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            if self.transport.is_live() {
                self.live_calls.fetch_add(1, Ordering::SeqCst);
            }
            match self.transport.call(request) {
                Ok(text) => {
                    self.record(request, &text)?;
                    return Ok(CompletionResponse {
                        text,
                        model_id: self.model_id.clone(),
                        latency: start.elapsed(),
                        attempt_count: attempt,
                    });
                }
                Err(err) if err.is_retryable() => {
                    if attempt >= self.retry.max_attempts {
                        return Err(BackendError::RetriesExhausted {
                            attempts: attempt,
                            last: Box::new(err),
                        });
                    }
                    // Retry k (1-based) waits base * 2^(k-1).
                    let exponent = attempt.saturating_sub(1).min(16);
                    std::thread::sleep(self.retry.base_backoff * 2u32.pow(exponent));
                }
                Err(err) => return Err(err),
            }
        }
    }

    fn record(&self, request: &CompletionRequest, text: &str) -> Result<(), BackendError> {
        if let Some(recorder) = &self.recorder {
            let entry = CacheEntry {
                fingerprint: request.fingerprint(&self.model_id),
                model_id: self.model_id.clone(),
                text: text.to_string(),
            };
            recorder
                .lock()
                .expect("cache lock poisoned")
                .record(entry)?;
        }
        Ok(())
    }
}

/// Counting semaphore; permits release on drop.
struct Limiter {
    max: usize,
    in_use: Mutex<usize>,
    available: Condvar,
}

struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Limiter {
    fn new(max: usize) -> Self {
        Self { max, in_use: Mutex::new(0), available: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut in_use = self.in_use.lock().expect("limiter lock poisoned");
        while *in_use >= self.max {
            in_use = self.available.wait(in_use).expect("limiter lock poisoned");
        }
        *in_use += 1;
        Permit { limiter: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut in_use = self.limiter.in_use.lock().expect("limiter lock poisoned");
        *in_use -= 1;
        self.limiter.available.notify_one();
    }
}
