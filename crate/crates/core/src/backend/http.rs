use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, BackendError, GenerationRequest, GenerationResponse};

pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";
pub const DEFAULT_MODEL: &str = "gpt-4o-mini";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL up to and including the API version.
    pub api_base: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn new(api_base: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            api_base: api_base.into(),
            api_key,
            timeout: Duration::from_secs(60),
        }
    }

    /// Reads `ROUTINECAST_API_BASE` and `ROUTINECAST_API_KEY`.
    pub fn from_env() -> Self {
        let base = std::env::var(super::API_BASE_ENV).unwrap_or_else(|_| DEFAULT_API_BASE.into());
        let key = std::env::var(super::API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(base, key)
    }
}

/// OpenAI-compatible chat-completions client in JSON mode.
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::Client,
    requests: AtomicUsize,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize, Serialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            config,
            client,
            requests: AtomicUsize::new(0),
        })
    }

    fn body(req: &GenerationRequest) -> serde_json::Value {
        let mut body = json!({
            "model": req.model_id,
            "messages": [{"role": "user", "content": req.prompt_text}],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        if req.json_mode {
            body["response_format"] = json!({"type": "json_object"});
        }
        body
    }
}

fn retry_after(headers: &reqwest::header::HeaderMap) -> Option<Duration> {
    headers
        .get(reqwest::header::RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|s| s.is_finite() && *s >= 0.0)
        .map(Duration::from_secs_f64)
}

#[async_trait]
impl Backend for HttpBackend {
    fn backend_id(&self) -> String {
        format!("http:{}", self.config.api_base.trim_end_matches('/'))
    }

    async fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        req.validate()?;
        let url = format!("{}/chat/completions", self.config.api_base.trim_end_matches('/'));
        let mut builder = self.client.post(&url).json(&Self::body(req));
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let started = Instant::now();
        self.requests.fetch_add(1, Ordering::Relaxed);
        let resp = builder.send().await.map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        if !resp.status().is_success() {
            let after = retry_after(resp.headers());
            let body = resp.text().await.unwrap_or_default();
            return Err(match status {
                401 | 403 => BackendError::AuthError(body),
                429 => BackendError::RateLimited { retry_after: after },
                408 => BackendError::Timeout,
                s if s >= 500 => BackendError::ServerError { status: s, body },
                _ => BackendError::InvalidRequest(format!("status {status}: {body}")),
            });
        }
        let parsed: ChatResponse = resp.json().await.map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transport(format!("unreadable response: {e}"))
            }
        })?;
        let raw_text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        Ok(GenerationResponse {
            raw_text,
            latency_ms: started.elapsed().as_millis() as u64,
            cache_hit: false,
            backend_id: self.backend_id(),
        })
    }

    fn network_calls(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }
}
