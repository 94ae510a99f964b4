//! Time-aware Markov reference model.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64(seed)` and switched to stream `stream` via `set_stream`.
//! A categorical draw takes one `f64` from `rand`'s standard distribution
//! (53 high bits of a `u64`, scaled to [0, 1)) and returns the first label,
//! in index order, whose cumulative probability exceeds it. Labels with
//! zero probability are never returned.

use chrono::{Duration, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::priors::{DurationLevel, Priors, PriorsError, TransitionLevel};
use crate::types::{ActivityLabel, SlotKey};

/// Hard stop for a single rollout; a day cannot hold this many steps
/// unless predicted durations have collapsed towards zero.
pub const MAX_ROLLOUT_STEPS: usize = 20_000;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error(transparent)]
    Priors(#[from] PriorsError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("rollout aborted after {steps} steps: {reason}")]
    Aborted { steps: usize, reason: String },
}

/// Seeded, portable random stream for baseline sampling.
#[derive(Debug, Clone)]
pub struct BaselineRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl BaselineRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_unit(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }
}

/// Draws an index from `probabilities` given `u` in [0, 1).
pub fn categorical_index(probabilities: &[f64], u: f64) -> Option<usize> {
    let mut acc = 0.0;
    let mut last_nonzero = None;
    for (i, &p) in probabilities.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last_nonzero = Some(i);
        if u < acc {
            return Some(i);
        }
    }
    // Rounding can leave the cumulative sum a hair under 1.
    last_nonzero
}

/// Most probable index; ties go to the lowest index.
pub fn argmax_index(probabilities: &[f64]) -> Option<usize> {
    probabilities
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .fold(None, |best: Option<(usize, f64)>, (i, &p)| match best {
            Some((_, bp)) if bp >= p => best,
            _ => Some((i, p)),
        })
        .map(|(i, _)| i)
}

pub enum Decoding<'a> {
    Sample(&'a mut BaselineRng),
    Argmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselinePrediction {
    pub label: ActivityLabel,
    pub duration_minutes: f64,
    pub transition_level: TransitionLevel,
    pub duration_level: DurationLevel,
    /// `None` under argmax decoding.
    pub rng_seed: Option<u64>,
}

pub fn predict_next_baseline(
    priors: &Priors,
    prev: ActivityLabel,
    key: SlotKey,
    decoding: &mut Decoding<'_>,
) -> Result<BaselinePrediction, BaselineError> {
    let (dist, transition_level) = priors.lookup_transition(prev, key)?;
    let (index, rng_seed) = match decoding {
        Decoding::Sample(rng) => {
            let u = rng.next_unit();
            (categorical_index(&dist.probabilities, u), Some(rng.seed()))
        }
        Decoding::Argmax => (argmax_index(&dist.probabilities), None),
    };
    let index = index.ok_or_else(|| PriorsError::NoPrior(priors.ontology.name(prev).to_string()))?;
    let label = ActivityLabel(index as u16);
    let (duration_minutes, duration_level) = priors.lookup_duration(label, key.day)?;
    Ok(BaselinePrediction {
        label,
        duration_minutes,
        transition_level,
        duration_level,
        rng_seed,
    })
}

/// One predicted activity in a rollout. `duration_minutes` is the full
/// predicted duration; truncation at the span end happens when the
/// rollout is expanded into a timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    pub label: ActivityLabel,
    #[serde(with = "crate::serde_ts")]
    pub start: NaiveDateTime,
    pub duration_minutes: f64,
}

impl RolloutStep {
    pub fn end(&self) -> NaiveDateTime {
        advance(self.start, self.duration_minutes)
    }
}

/// Moves a clock forward by a positive number of minutes, at least one
/// microsecond so that successive starts strictly increase.
pub fn advance(clock: NaiveDateTime, minutes: f64) -> NaiveDateTime {
    let micros = (minutes * 60_000_000.0).round().max(1.0) as i64;
    clock + Duration::microseconds(micros)
}

/// Checks that `[start, end]` is a non-negative span inside one calendar
/// day (the end may be the following midnight).
pub fn validate_day_span(start: NaiveDateTime, end: NaiveDateTime) -> Result<(), BaselineError> {
    if end < start {
        return Err(BaselineError::Config(format!(
            "rollout end {end} precedes start {start}"
        )));
    }
    let next_midnight = start.date().and_hms_opt(0, 0, 0).expect("midnight") + Duration::days(1);
    if end > next_midnight {
        return Err(BaselineError::Config(format!(
            "rollout span {start}..{end} crosses into another day"
        )));
    }
    Ok(())
}

/// Rolls the Markov model forward from the last finished activity of
/// `seed_history` until the clock reaches `end`.
pub fn rollout_baseline(
    priors: &Priors,
    seed_history: &[ActivityLabel],
    start: NaiveDateTime,
    end: NaiveDateTime,
    decoding: &mut Decoding<'_>,
) -> Result<Vec<RolloutStep>, BaselineError> {
    validate_day_span(start, end)?;
    let mut prev = *seed_history
        .last()
        .ok_or_else(|| BaselineError::Config("seed history is empty".into()))?;
    let mut clock = start;
    let mut steps = Vec::new();
    while clock < end {
        if steps.len() >= MAX_ROLLOUT_STEPS {
            return Err(BaselineError::Aborted {
                steps: steps.len(),
                reason: "step limit reached".into(),
            });
        }
        let pred = predict_next_baseline(priors, prev, SlotKey::of(&clock), decoding).map_err(
            |e| BaselineError::Aborted {
                steps: steps.len(),
                reason: e.to_string(),
            },
        )?;
        steps.push(RolloutStep {
            label: pred.label,
            start: clock,
            duration_minutes: pred.duration_minutes,
        });
        clock = advance(clock, pred.duration_minutes);
        prev = pred.label;
    }
    Ok(steps)
}
