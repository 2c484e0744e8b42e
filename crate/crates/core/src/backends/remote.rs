//! Chat-completion client with retries and client-side rate limiting.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, CompletionRequest, DecisionBackend};

pub const DEFAULT_KEY_ENV: &str = "GABM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_system")]
    pub system_prompt: String,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_base_delay")]
    pub base_delay_ms: u64,
    #[serde(default = "default_max_delay")]
    pub max_delay_ms: u64,
    /// Sustained request rate; unlimited when absent.
    #[serde(default)]
    pub requests_per_second: Option<f64>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_key_env() -> String {
    DEFAULT_KEY_ENV.to_string()
}
fn default_system() -> String {
    "You are simulating a participant in an economic experiment. Stay in character.".to_string()
}
fn default_attempts() -> u32 {
    5
}
fn default_base_delay() -> u64 {
    500
}
fn default_max_delay() -> u64 {
    30_000
}
fn default_timeout() -> u64 {
    120
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: default_key_env(),
            system_prompt: default_system(),
            max_attempts: default_attempts(),
            base_delay_ms: default_base_delay(),
            max_delay_ms: default_max_delay(),
            requests_per_second: None,
            timeout_secs: default_timeout(),
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.base_delay_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms.min(self.max_delay_ms))
    }
}

/// Raw HTTP exchange: returns status and body, or a transport failure message.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: &str, body: &Value) -> Result<(u16, String), String>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport { attempts: 0, message: e.to_string() })?;
        Ok(HttpTransport { client })
    }
}

impl Transport for HttpTransport {
    fn post_json(&self, url: &str, bearer: &str, body: &Value) -> Result<(u16, String), String> {
        let resp = self.client.post(url).bearer_auth(bearer).json(body).send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| e.to_string())?;
        Ok((status, text))
    }
}

/// Token bucket with a burst of one second's worth of requests.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(rate: f64) -> Self {
        let capacity = rate.max(1.0);
        TokenBucket { rate, capacity, state: Mutex::new((capacity, Instant::now())) }
    }

    /// Blocks until a token is available.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut st = self.state.lock().expect("limiter lock");
                let now = Instant::now();
                let refill = now.duration_since(st.1).as_secs_f64() * self.rate;
                st.0 = (st.0 + refill).min(self.capacity);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - st.0) / self.rate)
            };
            std::thread::sleep(wait);
        }
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    api_key: String,
    transport: Box<dyn Transport>,
    limiter: Option<TokenBucket>,
    calls: AtomicU64,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend").field("config", &self.config).finish_non_exhaustive()
    }
}

impl RemoteBackend {
    /// Reads the credential from the configured environment variable.
    pub fn from_env(config: RemoteConfig) -> Result<Self, BackendError> {
        let key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| BackendError::MissingCredential(config.api_key_env.clone()))?;
        let transport = HttpTransport::new(Duration::from_secs(config.timeout_secs))?;
        Ok(Self::with_transport(config, key, Box::new(transport)))
    }

    pub fn with_transport(config: RemoteConfig, api_key: String, transport: Box<dyn Transport>) -> Self {
        let limiter = config.requests_per_second.filter(|r| *r > 0.0).map(TokenBucket::new);
        RemoteBackend { config, api_key, transport, limiter, calls: AtomicU64::new(0) }
    }

    /// Number of HTTP requests issued so far, retries included.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": self.config.system_prompt},
                {"role": "user", "content": request.prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

pub fn extract_content(body: &str) -> Result<String, BackendError> {
    let v: Value = serde_json::from_str(body).map_err(|e| BackendError::BadResponse(e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .ok_or_else(|| BackendError::BadResponse("missing choices[0].message.content".into()))?;
    match content {
        Value::String(s) if !s.trim().is_empty() => Ok(s.clone()),
        Value::String(_) | Value::Null => Err(BackendError::EmptyCompletion),
        other => Err(BackendError::BadResponse(format!("content is {other}"))),
    }
}

impl DecisionBackend for RemoteBackend {
    fn backend_id(&self) -> &str {
        "remote"
    }

    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        request.validate()?;
        let body = self.body(request);
        let attempts = self.config.max_attempts.max(1);
        let mut last_err = BackendError::Transport { attempts: 0, message: "no attempt made".into() };
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff(attempt - 1));
            }
            if let Some(l) = &self.limiter {
                l.acquire();
            }
            self.calls.fetch_add(1, Ordering::SeqCst);
            match self.transport.post_json(&self.config.endpoint, &self.api_key, &body) {
                Ok((200..=299, text)) => return extract_content(&text),
                Ok((status @ (401 | 403), text)) => {
                    return Err(BackendError::Auth(format!("HTTP {status}: {}", snippet(&text))));
                }
                Ok((429, _)) => last_err = BackendError::RateLimited { attempts: attempt + 1 },
                Ok((status @ 500..=599, text)) => {
                    last_err = BackendError::Transport {
                        attempts: attempt + 1,
                        message: format!("HTTP {status}: {}", snippet(&text)),
                    }
                }
                Ok((status, text)) => {
                    return Err(BackendError::BadResponse(format!("HTTP {status}: {}", snippet(&text))));
                }
                Err(message) => last_err = BackendError::Transport { attempts: attempt + 1, message },
            }
            log::debug!("remote attempt {} failed: {last_err}", attempt + 1);
        }
        Err(last_err)
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(200).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    struct Scripted {
        replies: Mutex<Vec<Result<(u16, String), String>>>,
        seen: Arc<Mutex<Vec<Value>>>,
    }

    impl Transport for Scripted {
        fn post_json(&self, _url: &str, bearer: &str, body: &Value) -> Result<(u16, String), String> {
            assert_eq!(bearer, "k");
            self.seen.lock().unwrap().push(body.clone());
            self.replies.lock().unwrap().remove(0)
        }
    }

    fn ok(content: &str) -> Result<(u16, String), String> {
        Ok((200, json!({"choices": [{"message": {"content": content}}]}).to_string()))
    }

    fn backend(replies: Vec<Result<(u16, String), String>>) -> (RemoteBackend, Arc<Mutex<Vec<Value>>>) {
        let mut cfg = RemoteConfig::new("http://localhost/v1/chat/completions", "m");
        cfg.base_delay_ms = 0;
        cfg.max_attempts = 3;
        let seen = Arc::new(Mutex::new(Vec::new()));
        let t = Scripted { replies: Mutex::new(replies), seen: seen.clone() };
        (RemoteBackend::with_transport(cfg, "k".into(), Box::new(t)), seen)
    }

    #[test]
    fn retries_rate_limits_then_succeeds() {
        let (b, seen) = backend(vec![Ok((429, String::new())), Err("reset".into()), ok("Punish")]);
        let mut req = CompletionRequest::new("hello");
        req.seed = Some(9);
        assert_eq!(b.complete(&req).unwrap(), "Punish");
        assert_eq!(b.calls(), 3);
        let body = &seen.lock().unwrap()[0];
        assert_eq!(body["messages"][1]["content"], "hello");
        assert_eq!(body["seed"], 9);
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let (b, _) = backend(vec![Ok((401, "bad key".into())), ok("x")]);
        assert!(matches!(b.complete(&CompletionRequest::new("p")), Err(BackendError::Auth(_))));
        assert_eq!(b.calls(), 1);
    }

    #[test]
    fn exhausted_retries_report_last_error() {
        let (b, _) = backend(vec![Ok((503, String::new())), Ok((429, String::new())), Ok((429, String::new()))]);
        assert_eq!(b.complete(&CompletionRequest::new("p")), Err(BackendError::RateLimited { attempts: 3 }));
    }

    #[test]
    fn empty_content_is_an_error() {
        let (b, _) = backend(vec![ok("  ")]);
        assert_eq!(b.complete(&CompletionRequest::new("p")), Err(BackendError::EmptyCompletion));
        assert!(matches!(extract_content("{}"), Err(BackendError::BadResponse(_))));
    }

    #[test]
    fn backoff_is_capped() {
        let mut cfg = RemoteConfig::new("u", "m");
        cfg.base_delay_ms = 100;
        cfg.max_delay_ms = 1000;
        assert_eq!(cfg.backoff(0), Duration::from_millis(100));
        assert_eq!(cfg.backoff(2), Duration::from_millis(400));
        assert_eq!(cfg.backoff(10), Duration::from_millis(1000));
    }

    #[test]
    fn missing_credential() {
        let mut cfg = RemoteConfig::new("u", "m");
        cfg.api_key_env = "GABM_TEST_SURELY_UNSET_VARIABLE".into();
        assert!(matches!(RemoteBackend::from_env(cfg), Err(BackendError::MissingCredential(_))));
    }
}
