//! LLM access layer: request/response types, a content-addressed response
//! cache, prompt templates, pluggable backends, and structured-output
//! parsing.
//!
//! Every completion flows through the cache regardless of backend, so any
//! run can be replayed offline from its cache directory.

pub mod cache;
pub mod parse;
pub mod template;

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, sha256_hex, CacheKey, CacheStats, ResponseCache};
pub use parse::{
    parse_structured, ExplanationPayload, JudgmentPayload, ParsedStructured, RankedExplanation,
    SchemaContext, SchemaName,
};
pub use template::{Template, TemplateRegistry};

pub const ENV_API_BASE: &str = "GECFORGE_API_BASE";
pub const ENV_API_KEY: &str = "GECFORGE_API_KEY";
pub const ENV_MODEL: &str = "GECFORGE_MODEL";
pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("template {name:?} has no binding for slot {slot:?}")]
    Template { name: String, slot: String },
    #[error("replay cache has no entry for digest {digest}; run against a live backend first or point --cache-dir at the recorded cache")]
    ReplayMiss { digest: String },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("provider refused the request (status {status}): {body}")]
    Refusal { status: u16, body: String },
    #[error("could not locate structured output: {message}")]
    Parse { message: String, raw: String },
    #[error("schema violation in field {field:?}: {message}")]
    Schema {
        field: String,
        message: String,
        raw: String,
    },
    #[error("scripted mock ran out of responses")]
    ScriptExhausted,
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl LlmError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        LlmError::Io {
            context: context.into(),
            source,
        }
    }

    /// Raw model text attached to parse/schema failures, if any.
    pub fn raw_text(&self) -> Option<&str> {
        match self {
            LlmError::Parse { raw, .. } | LlmError::Schema { raw, .. } => Some(raw),
            _ => None,
        }
    }
}

/// One few-shot demonstration: a user turn and the assistant reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub model: String,
    pub system_prompt: String,
    pub user_prompt: String,
    #[serde(default)]
    pub demonstrations: Vec<Demonstration>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<i64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub model: String,
    #[serde(default)]
    pub usage: Usage,
    #[serde(default)]
    pub cached: bool,
}

/// Scripted responses for the mock backend.
#[derive(Debug)]
pub enum MockScript {
    /// Responses handed out in order; exhaustion is an error.
    Sequence(Mutex<VecDeque<String>>),
    /// First rule whose `when` substring occurs in the user prompt wins.
    Rules {
        rules: Vec<MockRule>,
        default: Option<String>,
    },
}

#[derive(Debug, Clone, Deserialize)]
pub struct MockRule {
    pub when: String,
    pub respond: String,
}

impl MockScript {
    pub fn sequence<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        MockScript::Sequence(Mutex::new(items.into_iter().map(Into::into).collect()))
    }

    pub fn rules(rules: Vec<MockRule>, default: Option<String>) -> Self {
        MockScript::Rules { rules, default }
    }

    /// Loads a script file: `{"mode": "sequence", "responses": [...]}` or
    /// `{"mode": "rules", "rules": [{"when", "respond"}], "default": ...}`.
    pub fn from_file(path: &std::path::Path) -> Result<Self, LlmError> {
        #[derive(Deserialize)]
        #[serde(tag = "mode", rename_all = "snake_case")]
        enum ScriptFile {
            Sequence {
                responses: Vec<String>,
            },
            Rules {
                rules: Vec<MockRule>,
                #[serde(default)]
                default: Option<String>,
            },
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::io(format!("reading mock script {}", path.display()), e))?;
        let file: ScriptFile = serde_json::from_str(&text)
            .map_err(|e| LlmError::Config(format!("invalid mock script {}: {e}", path.display())))?;
        Ok(match file {
            ScriptFile::Sequence { responses } => MockScript::sequence(responses),
            ScriptFile::Rules { rules, default } => MockScript::rules(rules, default),
        })
    }

    fn next(&self, request: &LlmRequest) -> Result<String, LlmError> {
        match self {
            MockScript::Sequence(queue) => queue
                .lock()
                .expect("mock queue poisoned")
                .pop_front()
                .ok_or(LlmError::ScriptExhausted),
            MockScript::Rules { rules, default } => rules
                .iter()
                .find(|rule| request.user_prompt.contains(&rule.when))
                .map(|rule| rule.respond.clone())
                .or_else(|| default.clone())
                .ok_or_else(|| {
                    LlmError::Config("no mock rule matched and no default response set".into())
                }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub base_url: String,
    pub api_key: String,
    pub timeout_secs: u64,
}

impl LiveConfig {
    /// Reads `GECFORGE_API_BASE` / `GECFORGE_API_KEY`; the key is required.
    pub fn from_env() -> Result<Self, LlmError> {
        let base_url =
            std::env::var(ENV_API_BASE).unwrap_or_else(|_| DEFAULT_API_BASE.to_string());
        let api_key = std::env::var(ENV_API_KEY)
            .map_err(|_| LlmError::Config(format!("{ENV_API_KEY} is not set")))?;
        Ok(LiveConfig {
            base_url,
            api_key,
            timeout_secs: 120,
        })
    }
}

#[derive(Debug)]
pub enum Backend {
    /// OpenAI-compatible chat completions over HTTP.
    Live(LiveConfig),
    /// Serves only from the cache; any miss is an error.
    ReplayCache,
    /// Deterministic scripted responses for tests and offline runs.
    ScriptedMock(Arc<MockScript>),
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Live(_) => "live-api",
            Backend::ReplayCache => "replay-cache",
            Backend::ScriptedMock(_) => "scripted-mock",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RetryConfig {
    pub max_retries: u32,
    pub initial_delay_ms: u64,
    pub max_delay_ms: u64,
    pub exponential_base: f64,
    pub jitter: bool,
}

impl Default for RetryConfig {
    fn default() -> Self {
        RetryConfig {
            max_retries: 3,
            initial_delay_ms: 500,
            max_delay_ms: 10_000,
            exponential_base: 2.0,
            jitter: false,
        }
    }
}

impl RetryConfig {
    fn delay(&self, attempt: u32) -> Duration {
        let factor = self.exponential_base.max(1.0).powi(attempt as i32);
        let mut millis = (self.initial_delay_ms as f64 * factor).min(self.max_delay_ms as f64);
        if self.jitter {
            // Cheap time-seeded jitter in [0.5, 1.5); retries are already
            // nondeterministic, so no RNG dependency is warranted.
            let nanos = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.subsec_nanos())
                .unwrap_or(0);
            millis *= 0.5 + (nanos % 1000) as f64 / 1000.0;
        }
        Duration::from_millis(millis.min(self.max_delay_ms as f64) as u64)
    }
}

/// Sliding one-minute window over outbound call timestamps.
#[derive(Debug)]
pub struct RateLimiter {
    per_minute: u32,
    window: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn new(per_minute: u32) -> Self {
        RateLimiter {
            per_minute: per_minute.max(1),
            window: Mutex::new(VecDeque::new()),
        }
    }

    fn acquire(&self) {
        loop {
            let wait = {
                let mut window = self.window.lock().expect("rate window poisoned");
                let now = Instant::now();
                while window
                    .front()
                    .is_some_and(|t| now.duration_since(*t) >= Duration::from_secs(60))
                {
                    window.pop_front();
                }
                if (window.len() as u32) < self.per_minute {
                    window.push_back(now);
                    return;
                }
                Duration::from_secs(60).saturating_sub(now.duration_since(window[0]))
            };
            std::thread::sleep(wait.min(Duration::from_millis(250)).max(Duration::from_millis(1)));
        }
    }
}

pub struct LlmClient {
    backend: Backend,
    cache: ResponseCache,
    retry: RetryConfig,
    rate_limit: Option<RateLimiter>,
    outbound: AtomicU64,
}

impl LlmClient {
    pub fn new(backend: Backend, cache: ResponseCache) -> Self {
        LlmClient {
            backend,
            cache,
            retry: RetryConfig::default(),
            rate_limit: None,
            outbound: AtomicU64::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryConfig) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, per_minute: Option<u32>) -> Self {
        self.rate_limit = per_minute.map(RateLimiter::new);
        self
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    /// Completions that went past the cache to a backend (live or mock).
    pub fn outbound_calls(&self) -> u64 {
        self.outbound.load(Ordering::Relaxed)
    }

    /// Resolves a request: cache first, then the configured backend. The
    /// response is cached before returning, so identical requests are
    /// served from disk with `cached: true` from then on.
    pub fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let key = cache_key(request);
        if let Some(mut hit) = self.cache.get(&key)? {
            hit.cached = true;
            return Ok(hit);
        }
        let response = match &self.backend {
            Backend::ReplayCache => {
                return Err(LlmError::ReplayMiss {
                    digest: key.digest().to_string(),
                })
            }
            Backend::ScriptedMock(script) => {
                let text = script.next(request)?;
                self.outbound.fetch_add(1, Ordering::Relaxed);
                LlmResponse {
                    text,
                    model: request.model.clone(),
                    usage: Usage::default(),
                    cached: false,
                }
            }
            Backend::Live(config) => {
                if let Some(limiter) = &self.rate_limit {
                    limiter.acquire();
                }
                let response = self.live_complete(config, request)?;
                self.outbound.fetch_add(1, Ordering::Relaxed);
                response
            }
        };
        self.cache.put(&key, request, &response)?;
        Ok(response)
    }

    fn live_complete(
        &self,
        config: &LiveConfig,
        request: &LlmRequest,
    ) -> Result<LlmResponse, LlmError> {
        let url = format!(
            "{}/chat/completions",
            config.base_url.trim_end_matches('/')
        );
        let body = wire_body(request);
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build();

        let attempts = self.retry.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            let result = agent
                .post(&url)
                .set("Authorization", &format!("Bearer {}", config.api_key))
                .set("Content-Type", "application/json")
                .send_json(body.clone());
            match result {
                Ok(response) => return parse_wire_response(response, request),
                Err(ureq::Error::Status(status, response)) => {
                    let body = response.into_string().unwrap_or_default();
                    if status == 429 || (500..600).contains(&status) {
                        last_error = format!("status {status}: {}", truncate(&body, 200));
                        continue;
                    }
                    return Err(LlmError::Refusal { status, body });
                }
                Err(ureq::Error::Transport(transport)) => {
                    last_error = transport.to_string();
                }
            }
        }
        Err(LlmError::Transport {
            message: last_error,
            attempts,
        })
    }
}

fn wire_body(request: &LlmRequest) -> serde_json::Value {
    let mut messages = Vec::with_capacity(2 + request.demonstrations.len() * 2);
    if !request.system_prompt.is_empty() {
        messages.push(serde_json::json!({"role": "system", "content": request.system_prompt}));
    }
    for demo in &request.demonstrations {
        messages.push(serde_json::json!({"role": "user", "content": demo.input}));
        messages.push(serde_json::json!({"role": "assistant", "content": demo.output}));
    }
    messages.push(serde_json::json!({"role": "user", "content": request.user_prompt}));
    let mut body = serde_json::json!({
        "model": request.model,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    });
    if let Some(seed) = request.seed {
        body["seed"] = serde_json::json!(seed);
    }
    body
}

fn parse_wire_response(
    response: ureq::Response,
    request: &LlmRequest,
) -> Result<LlmResponse, LlmError> {
    #[derive(Deserialize)]
    struct Wire {
        choices: Vec<WireChoice>,
        #[serde(default)]
        model: Option<String>,
        #[serde(default)]
        usage: Option<WireUsage>,
    }
    #[derive(Deserialize)]
    struct WireChoice {
        message: WireMessage,
    }
    #[derive(Deserialize)]
    struct WireMessage {
        #[serde(default)]
        content: Option<String>,
    }
    #[derive(Deserialize, Default)]
    struct WireUsage {
        #[serde(default)]
        prompt_tokens: u64,
        #[serde(default)]
        completion_tokens: u64,
    }

    let raw = response
        .into_string()
        .map_err(|e| LlmError::io("reading completion body", e))?;
    let wire: Wire = serde_json::from_str(&raw).map_err(|e| LlmError::Refusal {
        status: 200,
        body: format!("unparseable completion body ({e}): {}", truncate(&raw, 200)),
    })?;
    let text = wire
        .choices
        .first()
        .and_then(|choice| choice.message.content.clone())
        .ok_or_else(|| LlmError::Refusal {
            status: 200,
            body: format!("completion carried no message content: {}", truncate(&raw, 200)),
        })?;
    let usage = wire.usage.unwrap_or_default();
    Ok(LlmResponse {
        text,
        model: wire.model.unwrap_or_else(|| request.model.clone()),
        usage: Usage {
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        },
        cached: false,
    })
}

fn truncate(text: &str, max: usize) -> &str {
    match text.char_indices().nth(max) {
        Some((offset, _)) => &text[..offset],
        None => text,
    }
}
