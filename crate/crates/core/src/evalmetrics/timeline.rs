use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::baseline::RolloutStep;
use crate::ingest::ActivityInterval;
use crate::types::ActivityLabel;

/// A labelled half-open span `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedLabel {
    pub label: ActivityLabel,
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
}

impl From<&ActivityInterval> for TimedLabel {
    fn from(iv: &ActivityInterval) -> Self {
        Self {
            label: iv.label,
            start: iv.start,
            end: iv.end,
        }
    }
}

impl From<&RolloutStep> for TimedLabel {
    fn from(s: &RolloutStep) -> Self {
        Self {
            label: s.label,
            start: s.start,
            end: s.end(),
        }
    }
}

/// What to do with minutes no interval covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GapPolicy {
    /// Keep uncovered minutes as a distinct `GAP` symbol.
    #[default]
    Keep,
    /// Remove uncovered minutes before alignment.
    Drop,
}

/// One label per minute; `None` is the reserved `GAP` symbol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyTimeline {
    pub day_id: String,
    pub minutes: Vec<Option<ActivityLabel>>,
}

impl DailyTimeline {
    /// `T_day`, the evaluated duration in minutes.
    pub fn len(&self) -> usize {
        self.minutes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutes.is_empty()
    }

    pub fn gap_minutes(&self) -> usize {
        self.minutes.iter().filter(|m| m.is_none()).count()
    }

    pub fn apply(self, policy: GapPolicy) -> Self {
        match policy {
            GapPolicy::Keep => self,
            GapPolicy::Drop => Self {
                day_id: self.day_id,
                minutes: self.minutes.into_iter().filter(Option::is_some).collect(),
            },
        }
    }
}

/// Number of minute instants `span_start + m` minutes that fall before `span_end`.
pub fn minute_count(span_start: NaiveDateTime, span_end: NaiveDateTime) -> usize {
    let micros = (span_end - span_start).num_microseconds().unwrap_or(0);
    if micros <= 0 {
        0
    } else {
        ((micros + 59_999_999) / 60_000_000) as usize
    }
}

/// Expands spans into a minute timeline over `[span_start, span_end)`.
///
/// Minute `m` starts at `span_start + m` minutes and takes the label of the
/// span containing that instant, or `GAP` when none does. Spans may extend
/// past either edge; they are truncated.
pub fn expand_timeline(
    day_id: impl Into<String>,
    spans: &[TimedLabel],
    span_start: NaiveDateTime,
    span_end: NaiveDateTime,
) -> Result<DailyTimeline, MetricsError> {
    if span_end <= span_start {
        return Err(MetricsError::Config(format!(
            "timeline span {span_start}..{span_end} is empty"
        )));
    }
    let mut sorted: Vec<&TimedLabel> = spans.iter().collect();
    sorted.sort_by_key(|s| s.start);
    for w in sorted.windows(2) {
        if w[1].start < w[0].end {
            return Err(MetricsError::Overlap {
                first: w[0].start,
                second: w[1].start,
            });
        }
    }

    let n = minute_count(span_start, span_end);
    let mut minutes = Vec::with_capacity(n);
    let mut cursor = 0;
    for m in 0..n {
        let instant = span_start + Duration::minutes(m as i64);
        while cursor < sorted.len() && sorted[cursor].end <= instant {
            cursor += 1;
        }
        let label = sorted
            .get(cursor)
            .filter(|s| s.start <= instant)
            .map(|s| s.label);
        minutes.push(label);
    }
    Ok(DailyTimeline {
        day_id: day_id.into(),
        minutes,
    })
}
