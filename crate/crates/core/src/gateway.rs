//! Chat-completion backends behind one interface.
//!
//! [`Gateway`] wraps a [`ChatBackend`] with request validation, a prompt
//! window check, an in-flight cap and optional response caching. Two backends
//! ship: [`RemoteBackend`] speaks the OpenAI-compatible chat wire shape and
//! retries transient failures; [`MockBackend`] answers from a script and is a
//! pure function of the request.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::http::{HttpRequest, HttpTransport};
use crate::tokenize::count_tokens;

pub const API_KEY_ENV: &str = "VFD_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn new(
        system: impl Into<String>,
        user: impl Into<String>,
        model: impl Into<String>,
    ) -> Self {
        ChatRequest {
            system: system.into(),
            user: user.into(),
            model: model.into(),
            temperature: None,
            max_tokens: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.system.trim().is_empty() {
            return Err(GatewayError::InvalidRequest(
                "system prompt is empty".into(),
            ));
        }
        if self.user.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("user prompt is empty".into()));
        }
        if self.max_tokens == Some(0) {
            return Err(GatewayError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u64,
    pub completion: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub backend: String,
    pub latency_ms: u64,
    pub token_usage: Option<TokenUsage>,
}

/// What a backend hands back before the gateway stamps timing on it.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendReply {
    pub text: String,
    pub token_usage: Option<TokenUsage>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend rejected the request with status {status}: {body}")]
    BackendRejected { status: u16, body: String },
    #[error("prompt of {tokens} tokens exceeds the {limit}-token window")]
    ContextOverflow { tokens: u64, limit: u64 },
    #[error("backend reported that the prompt exceeds its context window: {0}")]
    BackendContextOverflow(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("no scripted response for request {0}")]
    NoScriptedResponse(String),
}

/// Stable content hash of system prompt, user prompt and model.
pub fn fingerprint(req: &ChatRequest) -> String {
    let mut h = Sha256::new();
    for part in [&req.system, &req.user, &req.model] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, req: &ChatRequest) -> Result<BackendReply, GatewayError>;
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    /// Prompt window in tokens of the default tokenizer.
    pub max_prompt_tokens: Option<u64>,
    /// Cap on concurrent backend calls. `None` means unbounded.
    pub max_in_flight: Option<usize>,
    /// Cache responses by request fingerprint.
    pub cache: bool,
}

struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.freed.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    config: GatewayConfig,
    limiter: Option<Limiter>,
    cache: Mutex<HashMap<String, ChatResponse>>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, config: GatewayConfig) -> Self {
        let limiter = config.max_in_flight.map(|n| Limiter {
            available: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        });
        Gateway {
            backend,
            config,
            limiter,
            cache: Mutex::default(),
        }
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// Digest of backend identity and gateway settings, for run manifests.
    pub fn config_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.backend.name().as_bytes());
        h.update(serde_json::to_vec(&self.config).unwrap_or_default());
        hex::encode(h.finalize())[..16].to_owned()
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        if let Some(limit) = self.config.max_prompt_tokens {
            let tokens = count_tokens(&req.system) + count_tokens(&req.user);
            if tokens > limit {
                return Err(GatewayError::ContextOverflow { tokens, limit });
            }
        }
        let key = self.config.cache.then(|| fingerprint(req));
        if let Some(k) = &key {
            if let Some(hit) = self.cache.lock().unwrap().get(k) {
                return Ok(hit.clone());
            }
        }
        let _permit = self.limiter.as_ref().map(Limiter::acquire);
        let started = Instant::now();
        let reply = self.backend.complete(req)?;
        let resp = ChatResponse {
            text: reply.text.trim_end().to_owned(),
            backend: self.backend.name().to_owned(),
            latency_ms: started.elapsed().as_millis() as u64,
            token_usage: reply.token_usage,
        };
        if let Some(k) = key {
            self.cache.lock().unwrap().insert(k, resp.clone());
        }
        Ok(resp)
    }
}

/// Scripted answers for the mock backend.
#[derive(Debug, Clone, Default)]
pub struct MockScript {
    by_fingerprint: HashMap<String, String>,
    by_substring: Vec<(String, String)>,
    pub default_response: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum ScriptLine {
    Fingerprint {
        fingerprint: String,
        response: String,
    },
    Substring {
        match_substring: String,
        response: String,
    },
    Default {
        default_response: String,
    },
}

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fingerprint(mut self, fp: impl Into<String>, response: impl Into<String>) -> Self {
        self.by_fingerprint.insert(fp.into(), response.into());
        self
    }

    /// Answers `response` to any request whose system or user text contains
    /// `needle`. Rules are tried in insertion order.
    pub fn with_substring(
        mut self,
        needle: impl Into<String>,
        response: impl Into<String>,
    ) -> Self {
        self.by_substring.push((needle.into(), response.into()));
        self
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default_response = Some(response.into());
        self
    }

    /// Loads `{fingerprint, response}`, `{match_substring, response}` and
    /// `{default_response}` lines.
    pub fn load(path: &Path) -> Result<Self, crate::jsonl::JsonlError> {
        let mut script = MockScript::new();
        for line in crate::jsonl::read::<ScriptLine>(path)? {
            script = match line {
                ScriptLine::Fingerprint {
                    fingerprint,
                    response,
                } => script.with_fingerprint(fingerprint, response),
                ScriptLine::Substring {
                    match_substring,
                    response,
                } => script.with_substring(match_substring, response),
                ScriptLine::Default { default_response } => script.with_default(default_response),
            };
        }
        Ok(script)
    }

    pub fn lookup(&self, req: &ChatRequest) -> Option<&str> {
        if let Some(r) = self.by_fingerprint.get(&fingerprint(req)) {
            return Some(r);
        }
        self.by_substring
            .iter()
            .find(|(needle, _)| {
                req.user.contains(needle.as_str()) || req.system.contains(needle.as_str())
            })
            .map(|(_, r)| r.as_str())
            .or(self.default_response.as_deref())
    }
}

/// Deterministic backend for tests and offline runs. Keeps a transcript of
/// every request it receives.
#[derive(Default)]
pub struct MockBackend {
    script: MockScript,
    transcript: Mutex<Vec<ChatRequest>>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        MockBackend {
            script,
            transcript: Mutex::default(),
        }
    }

    pub fn sent(&self) -> Vec<ChatRequest> {
        self.transcript.lock().unwrap().clone()
    }
}

impl ChatBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, req: &ChatRequest) -> Result<BackendReply, GatewayError> {
        self.transcript.lock().unwrap().push(req.clone());
        match self.script.lookup(req) {
            Some(text) => Ok(BackendReply {
                text: text.to_owned(),
                token_usage: None,
            }),
            None => Err(GatewayError::NoScriptedResponse(fingerprint(req))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry);
        self.initial_backoff
            .saturating_mul(factor)
            .min(self.max_backoff)
    }
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

pub fn thread_sleeper() -> Sleeper {
    Arc::new(std::thread::sleep)
}

/// OpenAI-compatible chat-completions client.
pub struct RemoteBackend {
    transport: Arc<dyn HttpTransport>,
    url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    sleeper: Sleeper,
}

impl RemoteBackend {
    pub fn new(transport: Arc<dyn HttpTransport>, url: impl Into<String>) -> Self {
        RemoteBackend {
            transport,
            url: url.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            retry: RetryPolicy::default(),
            sleeper: thread_sleeper(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    fn wire_body(req: &ChatRequest) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": req.model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
        });
        if let Some(t) = req.temperature {
            body["temperature"] = t.into();
        }
        if let Some(m) = req.max_tokens {
            body["max_tokens"] = m.into();
        }
        body
    }

    fn parse_reply(body: &str) -> Result<BackendReply, GatewayError> {
        let v: serde_json::Value = serde_json::from_str(body)
            .map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
        let text = v
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .ok_or_else(|| {
                GatewayError::MalformedResponse("missing choices[0].message.content".into())
            })?;
        let token_usage = v.get("usage").and_then(|u| {
            Some(TokenUsage {
                prompt: u.get("prompt_tokens")?.as_u64()?,
                completion: u.get("completion_tokens")?.as_u64()?,
            })
        });
        Ok(BackendReply {
            text: text.to_owned(),
            token_usage,
        })
    }
}

fn is_transient(status: u16) -> bool {
    status == 408 || status == 429 || (500..600).contains(&status)
}

fn mentions_context_overflow(body: &str) -> bool {
    let b = body.to_ascii_lowercase();
    [
        "context_length_exceeded",
        "maximum context length",
        "context window",
        "prompt is too long",
    ]
    .iter()
    .any(|m| b.contains(m))
}

impl ChatBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn complete(&self, req: &ChatRequest) -> Result<BackendReply, GatewayError> {
        let http = HttpRequest::post_json(&self.url, &Self::wire_body(req))
            .bearer(self.api_key.as_deref());
        let mut retries = 0;
        loop {
            let attempt = self.transport.send(&http);
            let (failure, advised) = match attempt {
                Ok(resp) if resp.is_success() => return Self::parse_reply(&resp.body),
                Ok(resp) if mentions_context_overflow(&resp.body) && resp.status < 500 => {
                    return Err(GatewayError::BackendContextOverflow(resp.body))
                }
                Ok(resp) if !is_transient(resp.status) => {
                    return Err(GatewayError::BackendRejected {
                        status: resp.status,
                        body: resp.body,
                    })
                }
                Ok(resp) => {
                    let advised = resp
                        .header("retry-after")
                        .and_then(|s| s.trim().parse::<u64>().ok())
                        .map(Duration::from_secs);
                    (
                        GatewayError::BackendRejected {
                            status: resp.status,
                            body: resp.body,
                        },
                        advised,
                    )
                }
                Err(e) => (
                    GatewayError::Transport {
                        attempts: retries + 1,
                        message: e.0,
                    },
                    None,
                ),
            };
            if retries >= self.retry.max_retries {
                return Err(failure);
            }
            let delay = advised
                .unwrap_or_else(|| self.retry.backoff(retries))
                .min(self.retry.max_backoff);
            log::warn!("transient backend failure ({failure}); retrying in {delay:?}");
            (self.sleeper)(delay);
            retries += 1;
        }
    }
}
