//! Experiment orchestration: retrieval, prompting, generation and scoring
//! for the next-activity and rollout tasks.

mod next;
mod report;
mod rollout;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, GenerationRequest, DEFAULT_MODEL};
use crate::evalmetrics::{GapPolicy, MetricsError};
use crate::ingest::SplitDataset;
use crate::priors::Priors;
use crate::promptkit::{
    assemble_prompt, content_hash, parse_prediction, ContextText, OutputError, Prediction,
    PromptError, PromptTemplate,
};
use crate::retrieval::{
    build_instances, EmbedError, Embedder, EmbeddingVector, IndexError, InstanceContext, Retriever,
    Split, VectorIndex, DEFAULT_MMR_LAMBDA, HISTORY_WINDOW,
};

pub use next::run_next_activity;
pub use report::{
    emit_report, BaselineArm, CoverageCounts, DayDtw, DaySpan, FailureRecord, InputHashes,
    JointSuccess, NextActivityReport, RolloutReport, RolloutShotResult, RunReport, RunStats,
    ShotResult, SkippedDay, REPORT_SCHEMA_VERSION,
};
pub use rollout::{baseline_rollouts, eval_days, run_rollout, score_rollout, EvalDay};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Next,
    Rollout,
}

pub const DEFAULT_SHOTS: [usize; 7] = [0, 1, 2, 3, 4, 5, 10];
pub const DEFAULT_TOLERANCES: [f64; 3] = [5.0, 10.0, 15.0];
/// Regenerations allowed after an unparseable reply.
pub const DEFAULT_MAX_REGENERATIONS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub shot_counts: Vec<usize>,
    pub seed: u64,
    pub mmr_lambda: f64,
    pub tolerances: Vec<f64>,
    pub history_window: usize,
    pub gap_policy: GapPolicy,
    pub backend: String,
    pub embed_backend: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub max_regenerations: u32,
    /// Baseline rollouts per day, with seeds `seed, seed + 1, ...`.
    pub baseline_seeds: usize,
    pub concurrency: usize,
}

impl ExperimentConfig {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            shot_counts: DEFAULT_SHOTS.to_vec(),
            seed: 42,
            mmr_lambda: DEFAULT_MMR_LAMBDA,
            tolerances: DEFAULT_TOLERANCES.to_vec(),
            history_window: HISTORY_WINDOW,
            gap_policy: GapPolicy::Keep,
            backend: "mock".into(),
            embed_backend: "builtin".into(),
            model_id: DEFAULT_MODEL.into(),
            temperature: 0.0,
            max_output_tokens: 64,
            max_regenerations: DEFAULT_MAX_REGENERATIONS,
            baseline_seeds: 20,
            concurrency: 4,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if self.shot_counts.is_empty() {
            return bad("no shot counts".into());
        }
        if self.tolerances.is_empty() || self.tolerances.iter().any(|t| !(*t > 0.0)) {
            return bad(format!("tolerances must be positive: {:?}", self.tolerances));
        }
        if !(0.0..=1.0).contains(&self.mmr_lambda) {
            return bad(format!("mmr lambda {} outside [0, 1]", self.mmr_lambda));
        }
        if self.history_window != HISTORY_WINDOW {
            return bad(format!("history window is fixed at {HISTORY_WINDOW}"));
        }
        if !(self.temperature >= 0.0) {
            return bad(format!("temperature {} is negative", self.temperature));
        }
        if self.concurrency == 0 {
            return bad("concurrency must be positive".into());
        }
        if self.task == Task::Rollout && self.baseline_seeds == 0 {
            return bad("rollout needs at least one baseline seed".into());
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        content_hash(&serde_json::to_string(self).expect("config serializes"))
    }
}

/// Everything a run needs, built once from the training split.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub split: SplitDataset,
    pub priors: Arc<Priors>,
    pub retriever: Retriever,
    pub embedder: Arc<dyn Embedder>,
    pub backend: Arc<dyn Backend>,
    pub template: PromptTemplate,
    pub persona: Option<ContextText>,
    pub spatial: Option<ContextText>,
    pub priors_hash: String,
}

pub struct ExperimentParts {
    pub config: ExperimentConfig,
    pub split: SplitDataset,
    pub priors: Arc<Priors>,
    pub embedder: Arc<dyn Embedder>,
    pub backend: Arc<dyn Backend>,
    pub template: PromptTemplate,
    pub persona: Option<ContextText>,
    pub spatial: Option<ContextText>,
}

impl Experiment {
    /// Embeds the training instances and builds the retrieval index.
    /// Only training intervals ever enter the index.
    pub async fn prepare(parts: ExperimentParts) -> Result<Self, RunError> {
        parts.config.validate()?;
        let train = &parts.split.train;
        let (instances, _) = build_instances(train, 0..train.len(), Split::Train);
        if instances.is_empty() {
            return Err(RunError::Config(format!(
                "training split has {} intervals; need more than {HISTORY_WINDOW} to build demonstrations",
                train.len()
            )));
        }
        let vectors = parts.embedder.embed(&instances).await?;
        let index = VectorIndex::build(parts.embedder.backend_id(), instances, vectors)?;
        let priors_hash = content_hash(&parts.priors.to_json());
        Ok(Self {
            retriever: Retriever::new(index, parts.config.mmr_lambda),
            priors_hash,
            config: parts.config,
            split: parts.split,
            priors: parts.priors,
            embedder: parts.embedder,
            backend: parts.backend,
            template: parts.template,
            persona: parts.persona,
            spatial: parts.spatial,
        })
    }

    /// Runs the configured task and assembles the report.
    pub async fn run(&self) -> Result<RunReport, RunError> {
        let (next_activity, rollout) = match self.config.task {
            Task::Next => (Some(run_next_activity(self).await?), None),
            Task::Rollout => (None, Some(run_rollout(self).await?)),
        };
        let mut report = RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            task: self.config.task,
            seed: self.config.seed,
            config: self.config.clone(),
            hashes: self.hashes(),
            ontology: self.priors.ontology.names().to_vec(),
            backend_id: self.backend.backend_id(),
            embedder_id: self.embedder.backend_id(),
            partial: false,
            next_activity,
            rollout,
        };
        report.partial = report.is_partial();
        Ok(report)
    }

    pub fn hashes(&self) -> InputHashes {
        InputHashes {
            config: self.config.hash(),
            template: self.template.hash.clone(),
            persona: self.persona.as_ref().map(|p| p.hash.clone()),
            spatial: self.spatial.as_ref().map(|s| s.hash.clone()),
            priors: self.priors_hash.clone(),
        }
    }

    pub(crate) async fn embed_one(&self, ctx: &InstanceContext) -> Result<EmbeddingVector, RunError> {
        let mut v = self.embedder.embed(std::slice::from_ref(ctx)).await?;
        v.pop()
            .ok_or_else(|| RunError::Other("embedder returned no vector".into()))
    }

    /// Retrieves demonstrations, assembles the prompt and generates until a
    /// reply parses or the regeneration budget runs out.
    pub(crate) async fn predict(
        &self,
        query: &InstanceContext,
        query_vec: Option<&EmbeddingVector>,
        shots: usize,
    ) -> Result<Attempted, BackendError> {
        let demos: Vec<&InstanceContext> = match (shots, query_vec) {
            (0, _) | (_, None) => Vec::new(),
            (n, Some(q)) => {
                let set = self.retriever.select(q, n);
                set.items
                    .iter()
                    .map(|&i| self.retriever.index().instance(i))
                    .collect()
            }
        };
        let bundle = assemble_prompt(
            &self.template,
            &self.priors.ontology,
            &demos,
            query,
            self.persona.as_ref(),
            self.spatial.as_ref(),
        )
        .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;

        let mut req = GenerationRequest::new(bundle.text, self.config.model_id.clone());
        req.temperature = self.config.temperature;
        req.max_output_tokens = self.config.max_output_tokens;
        let mut last_error = None;
        for attempt in 0..=self.config.max_regenerations {
            req.attempt = attempt;
            let resp = self.backend.generate(&req).await?;
            match parse_prediction(&resp.raw_text, &self.priors.ontology) {
                Ok(mut p) => {
                    p.parse_attempts = attempt + 1;
                    return Ok(Attempted {
                        prediction: Some(p),
                        attempts: attempt + 1,
                        last_error: None,
                    });
                }
                Err(e) => last_error = Some(e),
            }
        }
        Ok(Attempted {
            prediction: None,
            attempts: self.config.max_regenerations + 1,
            last_error,
        })
    }
}

pub(crate) struct Attempted {
    pub prediction: Option<Prediction>,
    pub attempts: u32,
    pub last_error: Option<OutputError>,
}
