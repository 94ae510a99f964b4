//! CASAS event-log ingestion.
//!
//! Raw logs carry one sensor event per line. Only annotated lines (those
//! ending in `<Activity> begin|end`) contribute to activity intervals; the
//! rest are parsed for validation and then dropped.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, BufRead, Write};

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{
    canonical_name, ActivityLabel, DayOfWeek, Ontology, OntologyError, BEING_OUTSIDE, ENTER_HOME,
    LEAVE_HOME,
};

const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S%.f";
const ISO_FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.6f";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Ontology(#[from] OntologyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Marker {
    Begin,
    End,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    /// Label exactly as written in the log.
    pub label: String,
    pub marker: Marker,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEvent {
    pub timestamp: NaiveDateTime,
    pub sensor_id: String,
    pub sensor_value: String,
    pub annotation: Option<Annotation>,
}

/// Why a line was skipped by [`parse_events`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub lines_read: usize,
    pub blank_lines: usize,
    pub events: usize,
    pub annotated_events: usize,
    pub malformed: usize,
    /// First few malformed lines, for diagnostics.
    pub malformed_samples: Vec<SkippedLine>,
    pub distinct_dates: usize,
    /// Annotation counts keyed by canonical raw label, before any conversion.
    pub raw_label_events: BTreeMap<String, usize>,
}

const MAX_SKIP_SAMPLES: usize = 20;

#[derive(Debug, Clone)]
pub struct ParsedLog {
    pub events: Vec<RawEvent>,
    pub report: ParseReport,
}

fn parse_line(line: &str) -> Result<RawEvent, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let (date, time, sensor_id, sensor_value) = match fields.as_slice() {
        [d, t, s, v, ..] => (*d, *t, *s, *v),
        _ => return Err(format!("expected at least 4 fields, found {}", fields.len())),
    };
    let timestamp = NaiveDateTime::parse_from_str(&format!("{date} {time}"), TIMESTAMP_FORMAT)
        .map_err(|e| format!("bad timestamp `{date} {time}`: {e}"))?;
    let annotation = match &fields[4..] {
        [] => None,
        [label, marker] => {
            let marker = match marker.to_ascii_lowercase().as_str() {
                "begin" => Marker::Begin,
                "end" => Marker::End,
                other => return Err(format!("unknown marker `{other}`")),
            };
            Some(Annotation {
                label: (*label).to_string(),
                marker,
            })
        }
        rest => return Err(format!("unexpected trailing fields {rest:?}")),
    };
    Ok(RawEvent {
        timestamp,
        sensor_id: sensor_id.to_string(),
        sensor_value: sensor_value.to_string(),
        annotation,
    })
}

/// Parses a CASAS log. Malformed lines are counted and skipped; only a
/// failing reader is fatal.
pub fn parse_events<R: BufRead>(reader: R) -> Result<ParsedLog, IngestError> {
    let mut events = Vec::new();
    let mut report = ParseReport::default();
    let mut dates: BTreeSet<NaiveDate> = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        report.lines_read += 1;
        if line.trim().is_empty() {
            report.blank_lines += 1;
            continue;
        }
        match parse_line(&line) {
            Ok(ev) => {
                dates.insert(ev.timestamp.date());
                if let Some(a) = &ev.annotation {
                    report.annotated_events += 1;
                    *report
                        .raw_label_events
                        .entry(canonical_name(&a.label))
                        .or_default() += 1;
                }
                events.push(ev);
            }
            Err(reason) => {
                report.malformed += 1;
                if report.malformed_samples.len() < MAX_SKIP_SAMPLES {
                    report.malformed_samples.push(SkippedLine { line: i + 1, reason });
                }
            }
        }
    }
    report.events = events.len();
    report.distinct_dates = dates.len();
    Ok(ParsedLog { events, report })
}

/// One completed activity episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivityInterval {
    pub label: ActivityLabel,
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
    pub duration_minutes: f64,
    pub day_of_week: DayOfWeek,
}

impl ActivityInterval {
    /// Returns `None` unless `end > start`.
    pub fn new(label: ActivityLabel, start: NaiveDateTime, end: NaiveDateTime) -> Option<Self> {
        if end <= start {
            return None;
        }
        Some(Self {
            label,
            start,
            end,
            duration_minutes: minutes_between(start, end),
            day_of_week: DayOfWeek::of(&start),
        })
    }
}

/// Signed difference in minutes at microsecond resolution.
pub fn minutes_between(start: NaiveDateTime, end: NaiveDateTime) -> f64 {
    let micros = (end - start)
        .num_microseconds()
        .expect("interval span fits in i64 microseconds");
    micros as f64 / 60_000_000.0
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub unmatched_begin: usize,
    pub unmatched_end: usize,
    pub nonpositive_duration: usize,
    /// Matched pairs dropped because they overlap an earlier-starting interval.
    pub overlapping: usize,
    /// leave_home blocks superseded by a later leave_home, or never closed by enter_home.
    pub unmatched_leave: usize,
    /// enter_home blocks with no pending leave_home.
    pub unmatched_enter: usize,
    pub being_outside_built: usize,
    pub intervals: usize,
    pub per_label: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct IntervalSet {
    pub ontology: Ontology,
    /// Sorted by start, pairwise disjoint.
    pub intervals: Vec<ActivityInterval>,
    pub report: ExclusionReport,
}

struct Span {
    name: String,
    start: NaiveDateTime,
    end: NaiveDateTime,
}

/// Matches begin/end annotations into intervals and folds leave/enter
/// pairs into `being_outside`.
///
/// Each `begin` of a label is closed by the next `end` of the same label.
/// A second `begin` before that `end` orphans the first one. Out-of-home
/// periods run from the start of a leave_home block to the end of the
/// following enter_home block. Intervals that overlap an interval starting
/// earlier are dropped so the output tiles time without overlap.
pub fn build_intervals(events: &[RawEvent]) -> IntervalSet {
    let mut report = ExclusionReport::default();
    let mut open: HashMap<String, NaiveDateTime> = HashMap::new();
    let mut spans: Vec<Span> = Vec::new();

    for ev in events {
        let Some(a) = &ev.annotation else { continue };
        let name = canonical_name(&a.label);
        match a.marker {
            Marker::Begin => {
                if open.insert(name, ev.timestamp).is_some() {
                    report.unmatched_begin += 1;
                }
            }
            Marker::End => match open.remove(&name) {
                Some(start) => spans.push(Span {
                    name,
                    start,
                    end: ev.timestamp,
                }),
                None => report.unmatched_end += 1,
            },
        }
    }
    report.unmatched_begin += open.len();

    let (home, mut spans): (Vec<Span>, Vec<Span>) = spans
        .into_iter()
        .partition(|s| s.name == LEAVE_HOME || s.name == ENTER_HOME);
    spans.extend(pair_home_blocks(home, &mut report));

    spans.retain(|s| {
        let ok = s.end > s.start;
        if !ok {
            report.nonpositive_duration += 1;
        }
        ok
    });
    spans.sort_by_key(|s| s.start);

    let ontology = Ontology::from_observed(spans.iter().map(|s| s.name.as_str()));
    let mut intervals: Vec<ActivityInterval> = Vec::with_capacity(spans.len());
    for s in spans {
        if let Some(prev) = intervals.last() {
            if s.start < prev.end {
                report.overlapping += 1;
                continue;
            }
        }
        let label = ontology.get(&s.name).expect("ontology built from spans");
        intervals.push(ActivityInterval::new(label, s.start, s.end).expect("positive span"));
    }

    report.intervals = intervals.len();
    for iv in &intervals {
        *report
            .per_label
            .entry(ontology.name(iv.label).to_string())
            .or_default() += 1;
    }
    report.being_outside_built = report.per_label.get(BEING_OUTSIDE).copied().unwrap_or(0);
    IntervalSet {
        ontology,
        intervals,
        report,
    }
}

fn pair_home_blocks(mut blocks: Vec<Span>, report: &mut ExclusionReport) -> Vec<Span> {
    blocks.sort_by_key(|s| s.start);
    let mut out = Vec::new();
    let mut pending_leave: Option<NaiveDateTime> = None;
    for b in blocks {
        if b.name == LEAVE_HOME {
            if pending_leave.replace(b.start).is_some() {
                report.unmatched_leave += 1;
            }
        } else if let Some(start) = pending_leave.take() {
            out.push(Span {
                name: BEING_OUTSIDE.to_string(),
                start,
                end: b.end,
            });
        } else {
            report.unmatched_enter += 1;
        }
    }
    if pending_leave.is_some() {
        report.unmatched_leave += 1;
    }
    out
}

#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: Vec<ActivityInterval>,
    pub eval: Vec<ActivityInterval>,
    pub split_fraction: f64,
}

/// First `floor(fraction * n)` intervals go to training, the rest to evaluation.
pub fn chronological_split(
    intervals: &[ActivityInterval],
    fraction: f64,
) -> Result<SplitDataset, IngestError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(IngestError::Config(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    if intervals.len() < 2 {
        return Err(IngestError::Degenerate(format!(
            "need at least 2 intervals to split, got {}",
            intervals.len()
        )));
    }
    if intervals.windows(2).any(|w| w[1].start < w[0].start) {
        return Err(IngestError::Degenerate("intervals are not sorted by start".into()));
    }
    let cut = (fraction * intervals.len() as f64).floor() as usize;
    Ok(SplitDataset {
        train: intervals[..cut].to_vec(),
        eval: intervals[cut..].to_vec(),
        split_fraction: fraction,
    })
}

/// JSONL wire shape of one interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub label_index: usize,
    pub label_name: String,
    pub start_iso8601: String,
    pub end_iso8601: String,
    pub duration_minutes: f64,
    pub day_of_week: DayOfWeek,
}

pub fn format_timestamp(ts: &NaiveDateTime) -> String {
    ts.format(ISO_FORMAT).to_string()
}

pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime, chrono::ParseError> {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
}

impl IntervalRecord {
    pub fn from_interval(iv: &ActivityInterval, ontology: &Ontology) -> Self {
        Self {
            label_index: iv.label.index(),
            label_name: ontology.name(iv.label).to_string(),
            start_iso8601: format_timestamp(&iv.start),
            end_iso8601: format_timestamp(&iv.end),
            duration_minutes: iv.duration_minutes,
            day_of_week: iv.day_of_week,
        }
    }

    pub fn to_interval(&self, ontology: &Ontology) -> Result<ActivityInterval, String> {
        let label = ontology.by_index(self.label_index).map_err(|e| e.to_string())?;
        if ontology.name(label) != canonical_name(&self.label_name) {
            return Err(format!(
                "label index {} is `{}` in the ontology, record says `{}`",
                self.label_index,
                ontology.name(label),
                self.label_name
            ));
        }
        let start = parse_timestamp(&self.start_iso8601).map_err(|e| e.to_string())?;
        let end = parse_timestamp(&self.end_iso8601).map_err(|e| e.to_string())?;
        let iv = ActivityInterval::new(label, start, end)
            .ok_or_else(|| "end is not after start".to_string())?;
        if (iv.duration_minutes - self.duration_minutes).abs() > 1e-6 {
            return Err(format!(
                "duration_minutes {} disagrees with timestamps ({})",
                self.duration_minutes, iv.duration_minutes
            ));
        }
        if iv.day_of_week != self.day_of_week {
            return Err("day_of_week disagrees with start".into());
        }
        Ok(ActivityInterval {
            duration_minutes: self.duration_minutes,
            ..iv
        })
    }
}

pub fn write_intervals<W: Write>(
    mut w: W,
    intervals: &[ActivityInterval],
    ontology: &Ontology,
) -> io::Result<()> {
    for iv in intervals {
        serde_json::to_writer(&mut w, &IntervalRecord::from_interval(iv, ontology))?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_intervals<R: BufRead>(
    reader: R,
    ontology: &Ontology,
) -> Result<Vec<ActivityInterval>, IngestError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: IntervalRecord = serde_json::from_str(&line).map_err(|e| IngestError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec.to_interval(ontology).map_err(|message| IngestError::Format {
            line: i + 1,
            message,
        })?);
    }
    Ok(out)
}
