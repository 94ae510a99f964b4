use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use async_trait::async_trait;

use super::{Backend, BackendError, GenerationRequest, GenerationResponse};
use crate::baseline::{predict_next_baseline, Decoding};
use crate::priors::Priors;
use crate::promptkit::{content_hash, extract_query, render_prediction};
use crate::types::SlotKey;

/// Fault injection for exercising retry paths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MockFaults {
    /// Attempts with an index below this value get a non-JSON reply.
    pub malformed_attempts: u32,
}

/// Offline backend. It reads the query block back out of the prompt and
/// answers with the argmax of the time-aware Markov prior and the matching
/// median duration. Replies scripted by prompt hash take precedence.
pub struct MockBackend {
    priors: Arc<Priors>,
    scripted: HashMap<String, String>,
    faults: MockFaults,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(priors: Arc<Priors>) -> Self {
        Self {
            priors,
            scripted: HashMap::new(),
            faults: MockFaults::default(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_faults(mut self, faults: MockFaults) -> Self {
        self.faults = faults;
        self
    }

    /// Registers a fixed reply for an exact prompt.
    pub fn script(mut self, prompt: &str, reply: impl Into<String>) -> Self {
        self.scripted.insert(content_hash(prompt), reply.into());
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn answer(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        if let Some(reply) = self.scripted.get(&content_hash(&req.prompt_text)) {
            return Ok(reply.clone());
        }
        if req.attempt < self.faults.malformed_attempts {
            return Ok("I think they will relax next.".to_string());
        }
        let view = extract_query(&req.prompt_text).map_err(BackendError::MockContract)?;
        let last = view
            .last_label
            .ok_or_else(|| BackendError::MockContract("query has no recent activity".into()))?;
        if last.index() >= self.priors.ontology.len() {
            return Err(BackendError::MockContract(format!(
                "label index {} outside the ontology",
                last.index()
            )));
        }
        let key = SlotKey::new(view.day, view.minutes_since_midnight);
        let pred = predict_next_baseline(&self.priors, last, key, &mut Decoding::Argmax)
            .map_err(|e| BackendError::MockContract(e.to_string()))?;
        Ok(render_prediction(pred.label, pred.duration_minutes))
    }
}

#[async_trait]
impl Backend for MockBackend {
    fn backend_id(&self) -> String {
        "mock-argmax-v1".to_string()
    }

    async fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        req.validate()?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let raw_text = self.answer(req)?;
        Ok(GenerationResponse {
            raw_text,
            latency_ms: 0,
            cache_hit: false,
            backend_id: self.backend_id(),
        })
    }
}
