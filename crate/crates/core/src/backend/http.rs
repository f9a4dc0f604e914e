//! OpenAI-compatible HTTP backend.
//!
//! Completions go to `POST {base_url}/chat/completions` with one user
//! message holding the rendered prompt. Target scoring uses the legacy
//! `POST {base_url}/completions` endpoint in echo mode, summing the token
//! log-probabilities that fall inside the target continuation.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Condvar, Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, Completion, GenerationParams, LanguageModel, Usage};

pub const DEFAULT_API_KEY_ENV: &str = "ASPECTCUE_API_KEY";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoding {
    /// Temperature forced to 0 on the wire; the reproducible default.
    #[default]
    Greedy,
    /// Configured temperature is sent as is.
    Sample,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetScoring {
    /// Probe the endpoint once, on first use.
    #[default]
    Auto,
    Enabled,
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub params: GenerationParams,
    pub decoding: Decoding,
    pub parallelism: usize,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub target_scoring: TargetScoring,
    /// When false, a 400 response to a request carrying the extension
    /// fields (`repetition_penalty`, `top_k`) is retried without them.
    pub strict_fields: bool,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "default".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            params: GenerationParams::default(),
            decoding: Decoding::Greedy,
            parallelism: 4,
            timeout_secs: 120,
            max_attempts: 3,
            initial_backoff_ms: 500,
            target_scoring: TargetScoring::Auto,
            strict_fields: false,
        }
    }
}

/// Append-only JSONL log of every request and its outcome.
#[derive(Debug)]
pub struct AuditLog {
    file: Mutex<File>,
}

impl AuditLog {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Mutex::new(file),
        })
    }

    pub fn record(&self, entry: &Value) {
        let mut line = entry.to_string();
        line.push('\n');
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        // Audit failures must not fail the request itself.
        let _ = f.write_all(line.as_bytes());
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.0.cv.notify_one();
    }
}

enum Failure {
    Transient(String),
    Fatal(BackendError),
    Rejected(String),
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    limiter: Limiter,
    drop_extensions: AtomicBool,
    scoring: OnceLock<bool>,
    audit: Option<AuditLog>,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("base_url", &self.config.base_url)
            .field("model", &self.config.model)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    /// Builds a backend, reading the credential from the configured
    /// environment variable. A missing variable means unauthenticated
    /// requests, which suits local servers.
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Self::with_api_key(config, api_key)
    }

    pub fn with_api_key(
        config: HttpBackendConfig,
        api_key: Option<String>,
    ) -> Result<Self, BackendError> {
        config.params.validate()?;
        if config.max_attempts == 0 {
            return Err(BackendError::InvalidRequest("max_attempts must be >= 1".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let scoring = OnceLock::new();
        match config.target_scoring {
            TargetScoring::Enabled => {
                let _ = scoring.set(true);
            }
            TargetScoring::Disabled => {
                let _ = scoring.set(false);
            }
            TargetScoring::Auto => {}
        }
        Ok(Self {
            limiter: Limiter::new(config.parallelism),
            config,
            agent,
            api_key,
            drop_extensions: AtomicBool::new(false),
            scoring,
            audit: None,
        })
    }

    pub fn with_audit_log(mut self, path: &Path) -> std::io::Result<Self> {
        self.audit = Some(AuditLog::create(path)?);
        Ok(self)
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.config
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn wire_temperature(&self, params: &GenerationParams) -> f64 {
        match self.config.decoding {
            Decoding::Greedy => 0.0,
            Decoding::Sample => params.temperature,
        }
    }

    /// JSON body for a chat completion. Exposed for inspection in tests.
    pub fn chat_body(&self, prompt: &str, params: &GenerationParams) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.wire_temperature(params),
            "top_p": params.top_p,
            "max_tokens": params.max_new_tokens,
        });
        if !self.drop_extensions.load(Ordering::Relaxed) {
            body["repetition_penalty"] = json!(params.repetition_penalty);
            body["top_k"] = json!(params.top_k);
        }
        body
    }

    fn post_once(&self, url: &str, body: &Value) -> Result<Value, Failure> {
        let _slot = self.limiter.acquire();
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send(body.to_string().as_bytes()) {
            Ok(r) => r,
            Err(ureq::Error::BadUri(u)) => {
                return Err(Failure::Fatal(BackendError::InvalidRequest(format!("bad URL {u}"))))
            }
            Err(e) => return Err(Failure::Transient(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Transient(format!("reading response body: {e}")))?;
        match status {
            200..=299 => serde_json::from_str(&text).map_err(|e| {
                Failure::Fatal(BackendError::Protocol(format!("response is not JSON: {e}")))
            }),
            401 | 403 => Err(Failure::Fatal(BackendError::Credential(format!(
                "HTTP {status}: {}",
                truncate(&text)
            )))),
            400 | 422 => Err(Failure::Rejected(format!("HTTP {status}: {}", truncate(&text)))),
            408 | 429 | 500..=599 => Err(Failure::Transient(format!("HTTP {status}"))),
            _ => Err(Failure::Fatal(BackendError::InvalidRequest(format!(
                "HTTP {status}: {}",
                truncate(&text)
            )))),
        }
    }

    /// POST with bounded exponential backoff on transient failures.
    fn post(&self, path: &str, mut body: Value) -> Result<Value, BackendError> {
        let url = self.endpoint(path);
        let mut delay = Duration::from_millis(self.config.initial_backoff_ms);
        let mut attempt = 0;
        let mut retried_without_extensions = false;
        loop {
            attempt += 1;
            match self.post_once(&url, &body) {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Rejected(msg)) => {
                    let has_ext = body.get("top_k").is_some() || body.get("repetition_penalty").is_some();
                    if !self.config.strict_fields && has_ext && !retried_without_extensions {
                        self.drop_extensions.store(true, Ordering::Relaxed);
                        if let Some(obj) = body.as_object_mut() {
                            obj.remove("top_k");
                            obj.remove("repetition_penalty");
                        }
                        retried_without_extensions = true;
                        attempt -= 1;
                        continue;
                    }
                    return Err(BackendError::InvalidRequest(msg));
                }
                Err(Failure::Transient(msg)) => {
                    if attempt >= self.config.max_attempts {
                        return Err(BackendError::Unavailable {
                            attempts: attempt,
                            message: msg,
                        });
                    }
                    std::thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
    }

    fn chat(&self, prompt: &str, params: &GenerationParams) -> Result<(String, Usage), BackendError> {
        let v = self.post("chat/completions", self.chat_body(prompt, params))?;
        let text = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Protocol("missing choices[0].message.content".into()))?
            .to_string();
        let usage = Usage {
            prompt_tokens: v.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
            completion_tokens: v
                .pointer("/usage/completion_tokens")
                .and_then(Value::as_u64)
                .unwrap_or(0),
        };
        Ok((text, usage))
    }

    fn score_target(&self, prompt: &str, target: &str) -> Result<f64, BackendError> {
        let body = json!({
            "model": self.config.model,
            "prompt": format!("{prompt}{target}"),
            "echo": true,
            "logprobs": 1,
            "max_tokens": 1,
            "temperature": 0.0,
        });
        let v = self.post("completions", body)?;
        let lp = v
            .pointer("/choices/0/logprobs")
            .ok_or_else(|| BackendError::Capability("response carries no logprobs".into()))?;
        let logprobs = lp.get("token_logprobs").and_then(Value::as_array);
        let offsets = lp.get("text_offset").and_then(Value::as_array);
        let (Some(logprobs), Some(offsets)) = (logprobs, offsets) else {
            return Err(BackendError::Capability(
                "logprobs lack token_logprobs/text_offset".into(),
            ));
        };
        let prompt_chars = prompt.chars().count() as u64;
        let full_chars = prompt_chars + target.chars().count() as u64;
        let mut sum = 0.0;
        for (lp, off) in logprobs.iter().zip(offsets) {
            let off = off.as_u64().unwrap_or(0);
            if off >= prompt_chars && off < full_chars {
                sum += lp.as_f64().unwrap_or(0.0);
            }
        }
        Ok(sum)
    }

    fn probe_scoring(&self) -> bool {
        self.score_target("Hello", " world").is_ok()
    }

    fn audit(&self, prompt: &str, params: &GenerationParams, target: Option<&str>, outcome: &Result<Completion, BackendError>) {
        let Some(log) = &self.audit else { return };
        let mut entry = json!({
            "timestamp": chrono::Utc::now().to_rfc3339(),
            "model": self.config.model,
            "prompt": prompt,
            "params": params,
            "decoding": self.config.decoding,
            "target": target,
        });
        match outcome {
            Ok(c) => entry["completion"] = json!(c),
            Err(e) => entry["error"] = json!(e.to_string()),
        }
        log.record(&entry);
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(300).collect()
}

impl LanguageModel for HttpBackend {
    fn name(&self) -> String {
        format!("http:{}", self.config.model)
    }

    fn supports_target_scoring(&self) -> bool {
        *self.scoring.get_or_init(|| self.probe_scoring())
    }

    fn complete(
        &self,
        prompt: &str,
        params: &GenerationParams,
        target: Option<&str>,
    ) -> Result<Completion, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        params.validate()?;
        let outcome = (|| {
            let target_logprob = match target {
                None => None,
                Some(t) => {
                    if !self.supports_target_scoring() {
                        return Err(BackendError::Capability(format!(
                            "endpoint {} does not provide echo log-probabilities",
                            self.config.base_url
                        )));
                    }
                    Some(self.score_target(prompt, t)?)
                }
            };
            let (text, usage) = self.chat(prompt, params)?;
            Ok(Completion {
                text,
                target_logprob,
                usage,
            })
        })();
        self.audit(prompt, params, target, &outcome);
        outcome
    }
}

/// Path of the audit log inside a run directory.
pub fn audit_path(run_dir: &Path) -> PathBuf {
    run_dir.join("audit.jsonl")
}
