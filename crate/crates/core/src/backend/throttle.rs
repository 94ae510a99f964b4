use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use tokio::sync::Semaphore;

use super::{Backend, BackendError, GenerationRequest, GenerationResponse};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThrottleConfig {
    /// Maximum requests in flight.
    pub concurrency: usize,
    /// Total tries per request, including the first.
    pub max_attempts: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for ThrottleConfig {
    fn default() -> Self {
        Self {
            concurrency: 4,
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

/// Concurrency limit plus bounded exponential backoff on transient errors.
pub struct Throttled<B> {
    inner: B,
    config: ThrottleConfig,
    permits: Semaphore,
    retries: AtomicUsize,
}

impl<B: Backend> Throttled<B> {
    pub fn new(inner: B, config: ThrottleConfig) -> Self {
        assert!(config.concurrency > 0, "concurrency must be positive");
        assert!(config.max_attempts > 0, "max_attempts must be positive");
        Self {
            permits: Semaphore::new(config.concurrency),
            inner,
            config,
            retries: AtomicUsize::new(0),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    /// Transient-error retries performed so far.
    pub fn retries(&self) -> usize {
        self.retries.load(Ordering::Relaxed)
    }

    fn delay_for(&self, retry: u32, err: &BackendError) -> Duration {
        let backoff = self
            .config
            .base_delay
            .saturating_mul(1u32 << retry.min(16))
            .min(self.config.max_delay);
        match err {
            BackendError::RateLimited {
                retry_after: Some(after),
            } => (*after).max(backoff).min(self.config.max_delay),
            _ => backoff,
        }
    }
}

#[async_trait]
impl<B: Backend> Backend for Throttled<B> {
    fn backend_id(&self) -> String {
        self.inner.backend_id()
    }

    async fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let mut attempt = 0;
        loop {
            let result = {
                let _permit = self.permits.acquire().await.expect("semaphore never closed");
                self.inner.generate(req).await
            };
            attempt += 1;
            match result {
                Err(e) if e.is_transient() && attempt < self.config.max_attempts => {
                    let delay = self.delay_for(attempt - 1, &e);
                    tracing::warn!(attempt, error = %e, ?delay, "transient backend error, backing off");
                    self.retries.fetch_add(1, Ordering::Relaxed);
                    tokio::time::sleep(delay).await;
                }
                other => return other,
            }
        }
    }

    fn network_calls(&self) -> usize {
        self.inner.network_calls()
    }
}
