//! Time-aware statistical priors estimated from the training split.
//!
//! Transitions are counted three times per consecutive pair: keyed by
//! (previous label, weekday, 15-minute slot of the successor's start), by
//! (previous label, weekday), and by previous label alone. Lookups walk
//! those levels from most to least specific.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ActivityInterval;
use crate::types::{ActivityLabel, DayOfWeek, Ontology, OntologyError, SlotKey, SLOTS_PER_DAY};

#[derive(Debug, Error)]
pub enum PriorsError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("no transition prior for previous activity `{0}`")]
    NoPrior(String),
    #[error("no duration prior for activity `{0}`")]
    NoDuration(String),
    #[error("invalid priors document: {0}")]
    Format(String),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionLevel {
    Slot,
    Day,
    Overall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationLevel {
    ActivityDow,
    Global,
}

/// Successor counts and their normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub counts: Vec<u64>,
    pub probabilities: Vec<f64>,
}

impl Distribution {
    fn from_counts(counts: Vec<u64>) -> Self {
        let total: u64 = counts.iter().sum();
        debug_assert!(total > 0);
        let probabilities = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Self {
            counts,
            probabilities,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionPriors {
    pub slot_level: BTreeMap<(ActivityLabel, SlotKey), Distribution>,
    pub day_level: BTreeMap<(ActivityLabel, DayOfWeek), Distribution>,
    pub overall: BTreeMap<ActivityLabel, Distribution>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DurationPriors {
    pub by_activity_dow: BTreeMap<(ActivityLabel, DayOfWeek), f64>,
    pub global: BTreeMap<ActivityLabel, f64>,
    /// Sample sizes behind each median, kept for the serialized document.
    pub activity_dow_n: BTreeMap<(ActivityLabel, DayOfWeek), usize>,
    pub global_n: BTreeMap<ActivityLabel, usize>,
}

pub fn estimate_transitions(
    train: &[ActivityInterval],
    n_labels: usize,
) -> Result<TransitionPriors, PriorsError> {
    if train.len() < 2 {
        return Err(PriorsError::Degenerate(format!(
            "need at least 2 training intervals, got {}",
            train.len()
        )));
    }
    let mut slot: BTreeMap<(ActivityLabel, SlotKey), Vec<u64>> = BTreeMap::new();
    let mut day: BTreeMap<(ActivityLabel, DayOfWeek), Vec<u64>> = BTreeMap::new();
    let mut overall: BTreeMap<ActivityLabel, Vec<u64>> = BTreeMap::new();
    let zeros = || vec![0u64; n_labels];

    for pair in train.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        let key = SlotKey::of(&next.start);
        let to = next.label.index();
        slot.entry((prev.label, key)).or_insert_with(zeros)[to] += 1;
        day.entry((prev.label, key.day)).or_insert_with(zeros)[to] += 1;
        overall.entry(prev.label).or_insert_with(zeros)[to] += 1;
    }

    Ok(TransitionPriors {
        slot_level: slot
            .into_iter()
            .map(|(k, c)| (k, Distribution::from_counts(c)))
            .collect(),
        day_level: day
            .into_iter()
            .map(|(k, c)| (k, Distribution::from_counts(c)))
            .collect(),
        overall: overall
            .into_iter()
            .map(|(k, c)| (k, Distribution::from_counts(c)))
            .collect(),
    })
}

/// Median with the mean-of-middle-two convention for even counts.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    })
}

pub fn estimate_duration_medians(train: &[ActivityInterval]) -> Result<DurationPriors, PriorsError> {
    if train.is_empty() {
        return Err(PriorsError::Degenerate("no training intervals".into()));
    }
    let mut by_key: BTreeMap<(ActivityLabel, DayOfWeek), Vec<f64>> = BTreeMap::new();
    let mut by_label: BTreeMap<ActivityLabel, Vec<f64>> = BTreeMap::new();
    for iv in train {
        by_key
            .entry((iv.label, iv.day_of_week))
            .or_default()
            .push(iv.duration_minutes);
        by_label.entry(iv.label).or_default().push(iv.duration_minutes);
    }
    let activity_dow_n = by_key.iter().map(|(k, v)| (*k, v.len())).collect();
    let global_n = by_label.iter().map(|(k, v)| (*k, v.len())).collect();
    Ok(DurationPriors {
        by_activity_dow: by_key
            .into_iter()
            .map(|(k, mut v)| (k, median(&mut v).expect("non-empty group")))
            .collect(),
        global: by_label
            .into_iter()
            .map(|(k, mut v)| (k, median(&mut v).expect("non-empty group")))
            .collect(),
        activity_dow_n,
        global_n,
    })
}

/// Everything the baseline and the mock backend need, plus the ontology
/// the label indices refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    pub ontology: Ontology,
    pub transitions: TransitionPriors,
    pub durations: DurationPriors,
}

impl Priors {
    pub fn estimate(ontology: Ontology, train: &[ActivityInterval]) -> Result<Self, PriorsError> {
        let transitions = estimate_transitions(train, ontology.len())?;
        let durations = estimate_duration_medians(train)?;
        Ok(Self {
            ontology,
            transitions,
            durations,
        })
    }

    pub fn lookup_transition(
        &self,
        prev: ActivityLabel,
        key: SlotKey,
    ) -> Result<(&Distribution, TransitionLevel), PriorsError> {
        lookup_transition(&self.transitions, prev, key)
            .ok_or_else(|| PriorsError::NoPrior(self.ontology.name(prev).to_string()))
    }

    pub fn lookup_duration(
        &self,
        label: ActivityLabel,
        day: DayOfWeek,
    ) -> Result<(f64, DurationLevel), PriorsError> {
        lookup_duration(&self.durations, label, day)
            .ok_or_else(|| PriorsError::NoDuration(self.ontology.name(label).to_string()))
    }

    pub fn to_document(&self) -> PriorsDocument {
        PriorsDocument::from_priors(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("priors serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, PriorsError> {
        let doc: PriorsDocument =
            serde_json::from_str(text).map_err(|e| PriorsError::Format(e.to_string()))?;
        doc.into_priors()
    }
}

pub fn lookup_transition(
    priors: &TransitionPriors,
    prev: ActivityLabel,
    key: SlotKey,
) -> Option<(&Distribution, TransitionLevel)> {
    priors
        .slot_level
        .get(&(prev, key))
        .map(|d| (d, TransitionLevel::Slot))
        .or_else(|| {
            priors
                .day_level
                .get(&(prev, key.day))
                .map(|d| (d, TransitionLevel::Day))
        })
        .or_else(|| priors.overall.get(&prev).map(|d| (d, TransitionLevel::Overall)))
}

pub fn lookup_duration(
    priors: &DurationPriors,
    label: ActivityLabel,
    day: DayOfWeek,
) -> Option<(f64, DurationLevel)> {
    priors
        .by_activity_dow
        .get(&(label, day))
        .map(|&m| (m, DurationLevel::ActivityDow))
        .or_else(|| priors.global.get(&label).map(|&m| (m, DurationLevel::Global)))
}

// Serialized form. Labels are written by name so the document reads on its own.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionEntry {
    pub level: TransitionLevel,
    pub prev_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub day: Option<DayOfWeek>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<u8>,
    pub counts: Vec<u64>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationEntry {
    pub level: DurationLevel,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub day: Option<DayOfWeek>,
    pub median_minutes: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorsDocument {
    pub ontology: Ontology,
    pub slot_level: Vec<TransitionEntry>,
    pub day_level: Vec<TransitionEntry>,
    pub overall: Vec<TransitionEntry>,
    pub duration_by_activity_dow: Vec<DurationEntry>,
    pub duration_global: Vec<DurationEntry>,
}

impl PriorsDocument {
    fn from_priors(p: &Priors) -> Self {
        let o = &p.ontology;
        let entry = |level, prev: ActivityLabel, day, slot, d: &Distribution| TransitionEntry {
            level,
            prev_label: o.name(prev).to_string(),
            day,
            slot,
            counts: d.counts.clone(),
            probabilities: d.probabilities.clone(),
        };
        let t = &p.transitions;
        let dp = &p.durations;
        Self {
            ontology: o.clone(),
            slot_level: t
                .slot_level
                .iter()
                .map(|((l, k), d)| entry(TransitionLevel::Slot, *l, Some(k.day), Some(k.slot), d))
                .collect(),
            day_level: t
                .day_level
                .iter()
                .map(|((l, day), d)| entry(TransitionLevel::Day, *l, Some(*day), None, d))
                .collect(),
            overall: t
                .overall
                .iter()
                .map(|(l, d)| entry(TransitionLevel::Overall, *l, None, None, d))
                .collect(),
            duration_by_activity_dow: dp
                .by_activity_dow
                .iter()
                .map(|((l, day), m)| DurationEntry {
                    level: DurationLevel::ActivityDow,
                    label: o.name(*l).to_string(),
                    day: Some(*day),
                    median_minutes: *m,
                    n: dp.activity_dow_n[&(*l, *day)],
                })
                .collect(),
            duration_global: dp
                .global
                .iter()
                .map(|(l, m)| DurationEntry {
                    level: DurationLevel::Global,
                    label: o.name(*l).to_string(),
                    day: None,
                    median_minutes: *m,
                    n: dp.global_n[l],
                })
                .collect(),
        }
    }

    pub fn into_priors(self) -> Result<Priors, PriorsError> {
        let o = self.ontology;
        let n = o.len();
        let fmt = |m: String| PriorsError::Format(m);
        let dist = |e: &TransitionEntry| -> Result<Distribution, PriorsError> {
            if e.counts.len() != n || e.probabilities.len() != n {
                return Err(fmt(format!(
                    "transition vector for `{}` has wrong length",
                    e.prev_label
                )));
            }
            if e.counts.iter().sum::<u64>() == 0 {
                return Err(fmt(format!("empty counts for `{}`", e.prev_label)));
            }
            // Probabilities are re-derived from counts so the document cannot drift.
            Ok(Distribution::from_counts(e.counts.clone()))
        };
        let need_day = |e: &TransitionEntry| {
            e.day
                .ok_or_else(|| fmt(format!("{:?} entry missing day", e.level)))
        };

        let mut t = TransitionPriors {
            slot_level: BTreeMap::new(),
            day_level: BTreeMap::new(),
            overall: BTreeMap::new(),
        };
        for e in &self.slot_level {
            let slot = e.slot.ok_or_else(|| fmt("slot entry missing slot".into()))?;
            if u32::from(slot) >= SLOTS_PER_DAY {
                return Err(fmt(format!("slot {slot} out of range")));
            }
            let key = SlotKey {
                day: need_day(e)?,
                slot,
            };
            t.slot_level.insert((o.label(&e.prev_label)?, key), dist(e)?);
        }
        for e in &self.day_level {
            t.day_level
                .insert((o.label(&e.prev_label)?, need_day(e)?), dist(e)?);
        }
        for e in &self.overall {
            t.overall.insert(o.label(&e.prev_label)?, dist(e)?);
        }

        let mut d = DurationPriors {
            by_activity_dow: BTreeMap::new(),
            global: BTreeMap::new(),
            activity_dow_n: BTreeMap::new(),
            global_n: BTreeMap::new(),
        };
        for e in &self.duration_by_activity_dow {
            if !(e.median_minutes > 0.0 && e.median_minutes.is_finite()) {
                return Err(fmt(format!("non-positive median for `{}`", e.label)));
            }
            let day = e.day.ok_or_else(|| fmt("duration entry missing day".into()))?;
            let key = (o.label(&e.label)?, day);
            d.by_activity_dow.insert(key, e.median_minutes);
            d.activity_dow_n.insert(key, e.n);
        }
        for e in &self.duration_global {
            if !(e.median_minutes > 0.0 && e.median_minutes.is_finite()) {
                return Err(fmt(format!("non-positive median for `{}`", e.label)));
            }
            let l = o.label(&e.label)?;
            d.global.insert(l, e.median_minutes);
            d.global_n.insert(l, e.n);
        }
        Ok(Priors {
            ontology: o,
            transitions: t,
            durations: d,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, NaiveDate, NaiveDateTime};

    fn at(day: u32, h: u32, m: u32) -> NaiveDateTime {
        // 2010-11-01 is a Monday.
        NaiveDate::from_ymd_opt(2010, 11, day)
            .unwrap()
            .and_hms_opt(h, m, 0)
            .unwrap()
    }

    fn iv(label: u16, start: NaiveDateTime, minutes: i64) -> ActivityInterval {
        ActivityInterval::new(ActivityLabel(label), start, start + Duration::minutes(minutes)).unwrap()
    }

    #[test]
    fn alternating_sequence_is_deterministic_everywhere() {
        let mut t = at(1, 0, 0);
        let mut train = Vec::new();
        for i in 0..40 {
            train.push(iv(i % 2, t, 50));
            t += Duration::minutes(53);
        }
        let p = estimate_transitions(&train, 2).unwrap();
        let a = ActivityLabel(0);
        let b = ActivityLabel(1);
        for ((prev, _), d) in &p.slot_level {
            let want = if *prev == a { [0.0, 1.0] } else { [1.0, 0.0] };
            assert_eq!(d.probabilities, want);
        }
        assert_eq!(p.overall[&a].probabilities, [0.0, 1.0]);
        assert_eq!(p.overall[&b].probabilities, [1.0, 0.0]);
        assert_eq!(p.day_level[&(a, DayOfWeek::Mon)].probabilities, [0.0, 1.0]);
    }

    #[test]
    fn counts_normalize_within_a_slot() {
        // A->B three times and A->C once, all successors in Monday slot 40 (10:00).
        let mut train = Vec::new();
        for (i, next) in [1u16, 1, 1, 2].into_iter().enumerate() {
            let day = 1 + 7 * i as u32;
            train.push(iv(0, at(day, 9, 0), 60));
            train.push(iv(next, at(day, 10, 1), 10));
        }
        let p = estimate_transitions(&train, 3).unwrap();
        let key = SlotKey {
            day: DayOfWeek::Mon,
            slot: 40,
        };
        let d = &p.slot_level[&(ActivityLabel(0), key)];
        assert_eq!(d.probabilities, [0.0, 0.75, 0.25]);
        assert_eq!(d.counts, [0, 3, 1]);
    }

    #[test]
    fn transitions_need_two_intervals() {
        assert!(matches!(
            estimate_transitions(&[iv(0, at(1, 0, 0), 5)], 1),
            Err(PriorsError::Degenerate(_))
        ));
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&mut [10.0, 2.0, 4.0]), Some(4.0));
        assert_eq!(median(&mut [4.0, 2.0]), Some(3.0));
        assert_eq!(median(&mut []), None);
    }

    #[test]
    fn duration_medians_by_day_and_global() {
        let train = vec![
            iv(0, at(1, 8, 0), 2),
            iv(0, at(8, 8, 0), 4),
            iv(0, at(15, 8, 0), 10),
            iv(0, at(2, 8, 0), 100),
        ];
        let d = estimate_duration_medians(&train).unwrap();
        assert_eq!(d.by_activity_dow[&(ActivityLabel(0), DayOfWeek::Mon)], 4.0);
        assert_eq!(d.by_activity_dow[&(ActivityLabel(0), DayOfWeek::Tue)], 100.0);
        assert_eq!(d.global[&ActivityLabel(0)], 7.0);
        assert!(estimate_duration_medians(&[]).is_err());
    }

    fn small_priors() -> Priors {
        let o = Ontology::new(["a", "b", "resperate"]).unwrap();
        let train = vec![
            iv(0, at(1, 9, 0), 30),
            iv(1, at(1, 9, 40), 20),
            iv(0, at(2, 9, 0), 30),
            iv(2, at(2, 11, 0), 5),
        ];
        Priors::estimate(o, &train).unwrap()
    }

    #[test]
    fn lookup_walks_fallback_levels() {
        let p = small_priors();
        let a = ActivityLabel(0);
        let key = SlotKey::of(&at(1, 9, 40));
        let (d, level) = p.lookup_transition(a, key).unwrap();
        assert_eq!(level, TransitionLevel::Slot);
        assert_eq!(d.probabilities, [0.0, 1.0, 0.0]);

        let key = SlotKey::of(&at(1, 20, 0));
        let (d, level) = p.lookup_transition(a, key).unwrap();
        assert_eq!(level, TransitionLevel::Day);
        assert_eq!(d.probabilities, [0.0, 1.0, 0.0]);

        let key = SlotKey::of(&at(5, 20, 0));
        let (d, level) = p.lookup_transition(a, key).unwrap();
        assert_eq!(level, TransitionLevel::Overall);
        assert_eq!(d.probabilities, [0.0, 0.5, 0.5]);

        // `resperate` never precedes anything.
        assert!(matches!(
            p.lookup_transition(ActivityLabel(2), key),
            Err(PriorsError::NoPrior(name)) if name == "resperate"
        ));
    }

    #[test]
    fn duration_lookup_falls_back_to_global() {
        let p = small_priors();
        assert_eq!(
            p.lookup_duration(ActivityLabel(0), DayOfWeek::Mon).unwrap(),
            (30.0, DurationLevel::ActivityDow)
        );
        assert_eq!(
            p.lookup_duration(ActivityLabel(2), DayOfWeek::Sat).unwrap(),
            (5.0, DurationLevel::Global)
        );
    }

    #[test]
    fn json_document_round_trips() {
        let p = small_priors();
        let back = Priors::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
        let doc = p.to_document();
        assert!(doc.slot_level.iter().all(|e| e.level == TransitionLevel::Slot));
        assert!(doc.overall.iter().all(|e| e.day.is_none() && e.slot.is_none()));
    }

    #[test]
    fn document_rejects_bad_vectors() {
        let mut doc = small_priors().to_document();
        doc.overall[0].counts.pop();
        assert!(matches!(doc.into_priors(), Err(PriorsError::Format(_))));
    }
}
