//! Scoring for both tasks: label and duration metrics for next-activity
//! prediction, and minute-timeline DTW for daily rollouts.

mod classification;
mod dtw;
mod timeline;

use chrono::NaiveDateTime;
use thiserror::Error;

pub use classification::{
    classification_report, duration_report, joint_success, Averaged, ClassStats,
    ClassificationReport, DurationReport, LabeledPair,
};
pub use dtw::{dtw, dtw_cost, DtwResult};
pub use timeline::{expand_timeline, minute_count, DailyTimeline, GapPolicy, TimedLabel};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no input for {0}")]
    Empty(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("overlapping intervals starting at {first} and {second}")]
    Overlap {
        first: NaiveDateTime,
        second: NaiveDateTime,
    },
}
