//! Text-generation backends.
//!
//! Backends compose: [`CachedBackend`] wraps [`Throttled`], which wraps
//! [`HttpBackend`]. [`MockBackend`] answers from the Markov priors and
//! never touches the network.

mod cache;
mod http;
mod mock;
mod throttle;

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::CachedBackend;
pub use http::{HttpBackend, HttpConfig, DEFAULT_API_BASE, DEFAULT_MODEL};
pub use mock::{MockBackend, MockFaults};
pub use throttle::{Throttled, ThrottleConfig};

pub const API_KEY_ENV: &str = "ROUTINECAST_API_KEY";
pub const API_BASE_ENV: &str = "ROUTINECAST_API_BASE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt_text: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub json_mode: bool,
    /// 0 for the first try; later values are regenerations after a bad reply.
    pub attempt: u32,
}

impl GenerationRequest {
    pub fn new(prompt_text: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            prompt_text: prompt_text.into(),
            model_id: model_id.into(),
            temperature: 0.0,
            max_output_tokens: 64,
            json_mode: true,
            attempt: 0,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.model_id.trim().is_empty() {
            return Err(BackendError::InvalidRequest("model id is empty".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn cache_key(&self) -> CacheKey {
        CacheKey::of(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub raw_text: String,
    pub latency_ms: u64,
    pub cache_hit: bool,
    pub backend_id: String,
}

/// SHA-256 over model id, temperature, attempt index and prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey(pub String);

impl CacheKey {
    pub fn of(req: &GenerationRequest) -> Self {
        let mut h = Sha256::new();
        h.update(b"model\0");
        h.update(req.model_id.as_bytes());
        h.update(b"\0temperature\0");
        h.update(req.temperature.to_bits().to_le_bytes());
        h.update(b"\0max_output_tokens\0");
        h.update(req.max_output_tokens.to_le_bytes());
        h.update(b"\0json_mode\0");
        h.update([u8::from(req.json_mode)]);
        h.update(b"\0attempt\0");
        h.update(req.attempt.to_le_bytes());
        h.update(b"\0prompt\0");
        h.update(req.prompt_text.as_bytes());
        Self(hex::encode(h.finalize()))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
    #[error("server error {status}: {body}")]
    ServerError { status: u16, body: String },
    #[error("authentication failed: {0}")]
    AuthError(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("mock contract violated: {0}")]
    MockContract(String),
    #[error("cache error: {0}")]
    Cache(String),
}

impl BackendError {
    /// Transient failures that a retry may fix.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            BackendError::Timeout
                | BackendError::RateLimited { .. }
                | BackendError::ServerError { .. }
                | BackendError::Transport(_)
        )
    }
}

#[async_trait]
pub trait Backend: Send + Sync {
    fn backend_id(&self) -> String;

    async fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError>;

    /// Requests that actually left the process.
    fn network_calls(&self) -> usize {
        0
    }
}

#[async_trait]
impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn backend_id(&self) -> String {
        (**self).backend_id()
    }

    async fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        (**self).generate(req).await
    }

    fn network_calls(&self) -> usize {
        (**self).network_calls()
    }
}
