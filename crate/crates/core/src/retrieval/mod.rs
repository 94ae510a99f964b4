//! Demonstration retrieval: instance contexts, embeddings, an exact cosine
//! index and maximal-marginal-relevance selection.

mod embed;
mod index;

use std::ops::Range;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::ingest::ActivityInterval;
use crate::types::{minutes_since_midnight, ActivityLabel, DayOfWeek, Ontology};

pub use embed::{
    builtin_embedding, BuiltinEmbedder, EmbedError, Embedder, EmbeddingVector, HttpEmbedder,
    HttpEmbedderConfig, RECENCY_WEIGHTS,
};
pub use index::{
    cosine, mmr_select, DemonstrationSet, IndexError, Retriever, VectorIndex, DEFAULT_MMR_LAMBDA,
};

/// Number of completed activities shown as behavioral history.
pub const HISTORY_WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryItem {
    pub label: ActivityLabel,
    pub duration_minutes: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

/// Where an instance came from: its split and the index of its target
/// interval within the full chronological interval list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub split: Split,
    pub target_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub label: ActivityLabel,
    pub duration_minutes: f64,
}

/// The situation at an activity boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceContext {
    /// Query time: the end of the most recent completed activity.
    #[serde(with = "crate::serde_ts")]
    pub clock: NaiveDateTime,
    /// Oldest first, at most [`HISTORY_WINDOW`] entries.
    pub history: Vec<HistoryItem>,
    pub target: Option<Target>,
    pub provenance: Option<Provenance>,
}

impl InstanceContext {
    pub fn new(clock: NaiveDateTime, history: Vec<HistoryItem>) -> Self {
        Self {
            clock,
            history,
            target: None,
            provenance: None,
        }
    }

    pub fn day(&self) -> DayOfWeek {
        DayOfWeek::of(&self.clock)
    }

    pub fn local_minutes(&self) -> u32 {
        minutes_since_midnight(&self.clock)
    }

    pub fn last(&self) -> Option<&HistoryItem> {
        self.history.last()
    }

    /// Compact single-line rendering fed to text embedding models.
    pub fn canonical_text(&self, ontology: &Ontology) -> String {
        let m = self.local_minutes();
        let history = self
            .history
            .iter()
            .map(|h| format!("{} {:.1} min", ontology.name(h.label), h.duration_minutes))
            .collect::<Vec<_>>()
            .join(", ");
        format!(
            "{} {:02}:{:02} | recent: {}",
            self.day().full_name(),
            m / 60,
            m % 60,
            if history.is_empty() { "none" } else { &history }
        )
    }
}

fn history_before(all: &[ActivityInterval], i: usize, window: usize) -> Vec<HistoryItem> {
    all[i.saturating_sub(window)..i]
        .iter()
        .map(|iv| HistoryItem {
            label: iv.label,
            duration_minutes: iv.duration_minutes,
        })
        .collect()
}

/// Builds one instance per target interval in `targets` that has a full
/// history window before it in `all`. History may reach outside `targets`.
/// Returns the instances and the number of targets skipped for lack of history.
pub fn build_instances(
    all: &[ActivityInterval],
    targets: Range<usize>,
    split: Split,
) -> (Vec<InstanceContext>, usize) {
    let mut out = Vec::with_capacity(targets.len());
    let mut skipped = 0;
    for i in targets {
        if i < HISTORY_WINDOW {
            skipped += 1;
            continue;
        }
        let target = &all[i];
        out.push(InstanceContext {
            clock: all[i - 1].end,
            history: history_before(all, i, HISTORY_WINDOW),
            target: Some(Target {
                label: target.label,
                duration_minutes: target.duration_minutes,
            }),
            provenance: Some(Provenance {
                split,
                target_index: i,
            }),
        });
    }
    (out, skipped)
}
