//! Few-shot next-activity prediction and daily rollout evaluation over
//! CASAS-style smart-home event logs.

pub mod backend;
pub mod baseline;
pub mod evalmetrics;
pub mod ingest;
pub mod priors;
pub mod promptkit;
pub mod retrieval;
pub mod runner;
pub mod synth;
pub mod types;

mod serde_ts;
