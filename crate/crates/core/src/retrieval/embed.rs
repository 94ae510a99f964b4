use std::f64::consts::PI;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::InstanceContext;
use crate::types::Ontology;

/// History weights, newest first.
pub const RECENCY_WEIGHTS: [f64; 3] = [1.0, 0.6, 0.36];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Error)]
pub enum EmbedError {
    /// Transport failure or 5xx; worth retrying.
    #[error("embedding backend unavailable: {0}")]
    Retryable(String),
    #[error("embedding backend rejected the request ({status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed embedding response: {0}")]
    Decode(String),
}

#[async_trait]
pub trait Embedder: Send + Sync {
    fn backend_id(&self) -> String;

    async fn embed(&self, contexts: &[InstanceContext]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

/// Deterministic structural featurizer:
/// one-hot weekday (7) ++ [sin, cos] of time of day (2) ++ recency-weighted
/// label histogram (|ontology|) ++ ln(1 + last duration) (1), L2-normalized.
pub fn builtin_embedding(ctx: &InstanceContext, n_labels: usize) -> EmbeddingVector {
    let mut v = vec![0.0; 7 + 2 + n_labels + 1];
    v[ctx.day().index()] = 1.0;
    let angle = 2.0 * PI * f64::from(ctx.local_minutes()) / 1440.0;
    v[7] = angle.sin();
    v[8] = angle.cos();
    for (item, w) in ctx.history.iter().rev().zip(RECENCY_WEIGHTS) {
        v[9 + item.label.index()] += w;
    }
    if let Some(last) = ctx.last() {
        v[9 + n_labels] = last.duration_minutes.ln_1p();
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    EmbeddingVector { values: v }
}

#[derive(Debug, Clone)]
pub struct BuiltinEmbedder {
    n_labels: usize,
}

impl BuiltinEmbedder {
    pub fn new(ontology: &Ontology) -> Self {
        Self {
            n_labels: ontology.len(),
        }
    }
}

#[async_trait]
impl Embedder for BuiltinEmbedder {
    fn backend_id(&self) -> String {
        format!("builtin-v1/{}", self.n_labels)
    }

    async fn embed(&self, contexts: &[InstanceContext]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Ok(contexts
            .iter()
            .map(|c| builtin_embedding(c, self.n_labels))
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct HttpEmbedderConfig {
    /// Base URL up to and including the API version, e.g. `https://api.openai.com/v1`.
    pub api_base: String,
    pub api_key: Option<String>,
    pub model: String,
    pub batch_size: usize,
    pub max_attempts: u32,
    pub timeout: Duration,
}

impl HttpEmbedderConfig {
    pub fn new(api_base: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            api_base: api_base.into(),
            api_key: None,
            model: model.into(),
            batch_size: 128,
            max_attempts: 3,
            timeout: Duration::from_secs(60),
        }
    }
}

/// OpenAI-compatible `/embeddings` client. Contexts are embedded through
/// their canonical text rendering.
pub struct HttpEmbedder {
    config: HttpEmbedderConfig,
    ontology: Ontology,
    client: reqwest::Client,
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig, ontology: Ontology) -> Result<Self, EmbedError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| EmbedError::Retryable(e.to_string()))?;
        Ok(Self {
            config,
            ontology,
            client,
        })
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let url = format!("{}/embeddings", self.config.api_base.trim_end_matches('/'));
        let mut req = self.client.post(&url).json(&EmbeddingRequest {
            model: &self.config.model,
            input: texts,
        });
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| EmbedError::Retryable(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(EmbedError::Retryable(format!("status {status}")));
        }
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(EmbedError::Rejected {
                status: status.as_u16(),
                body,
            });
        }
        let parsed: EmbeddingResponse = resp
            .json()
            .await
            .map_err(|e| EmbedError::Decode(e.to_string()))?;
        if parsed.data.len() != texts.len() {
            return Err(EmbedError::Decode(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        let mut data = parsed.data;
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index);
        }
        let out: Vec<EmbeddingVector> = data
            .into_iter()
            .map(|d| EmbeddingVector {
                values: d.embedding,
            })
            .collect();
        if out.iter().any(|v| v.values.iter().any(|x| !x.is_finite())) {
            return Err(EmbedError::Decode("non-finite embedding value".into()));
        }
        Ok(out)
    }
}

#[async_trait]
impl Embedder for HttpEmbedder {
    fn backend_id(&self) -> String {
        format!("http/{}", self.config.model)
    }

    async fn embed(&self, contexts: &[InstanceContext]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let texts: Vec<String> = contexts
            .iter()
            .map(|c| c.canonical_text(&self.ontology))
            .collect();
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.config.batch_size.max(1)) {
            let mut attempt = 0;
            loop {
                attempt += 1;
                match self.embed_batch(chunk).await {
                    Ok(v) => {
                        out.extend(v);
                        break;
                    }
                    Err(EmbedError::Retryable(msg)) if attempt < self.config.max_attempts => {
                        tracing::warn!(attempt, %msg, "embedding request failed, retrying");
                        tokio::time::sleep(Duration::from_millis(250 << attempt)).await;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(out)
    }
}
