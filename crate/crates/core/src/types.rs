//! Shared domain vocabulary: weekdays, activity labels and the ontology
//! that maps between label indices and canonical names.

use std::collections::HashMap;
use std::fmt;

use chrono::{Datelike, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the synthetic out-of-home activity.
pub const BEING_OUTSIDE: &str = "being_outside";
/// Raw annotation that opens an out-of-home period.
pub const LEAVE_HOME: &str = "leave_home";
/// Raw annotation that closes an out-of-home period.
pub const ENTER_HOME: &str = "enter_home";

/// Length of one time slot in minutes.
pub const SLOT_MINUTES: u32 = 15;
/// Number of slots in a day.
pub const SLOTS_PER_DAY: u32 = 24 * 60 / SLOT_MINUTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DayOfWeek {
    Mon,
    Tue,
    Wed,
    Thu,
    Fri,
    Sat,
    Sun,
}

impl DayOfWeek {
    pub const ALL: [DayOfWeek; 7] = [
        DayOfWeek::Mon,
        DayOfWeek::Tue,
        DayOfWeek::Wed,
        DayOfWeek::Thu,
        DayOfWeek::Fri,
        DayOfWeek::Sat,
        DayOfWeek::Sun,
    ];

    pub fn of(ts: &NaiveDateTime) -> Self {
        ts.weekday().into()
    }

    /// 0 for Monday through 6 for Sunday.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn full_name(self) -> &'static str {
        match self {
            DayOfWeek::Mon => "Monday",
            DayOfWeek::Tue => "Tuesday",
            DayOfWeek::Wed => "Wednesday",
            DayOfWeek::Thu => "Thursday",
            DayOfWeek::Fri => "Friday",
            DayOfWeek::Sat => "Saturday",
            DayOfWeek::Sun => "Sunday",
        }
    }

    pub fn from_full_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.full_name().eq_ignore_ascii_case(name.trim()))
    }
}

impl From<Weekday> for DayOfWeek {
    fn from(w: Weekday) -> Self {
        Self::ALL[w.num_days_from_monday() as usize]
    }
}

impl fmt::Display for DayOfWeek {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

/// Day of week plus 15-minute slot index within the day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotKey {
    pub day: DayOfWeek,
    pub slot: u8,
}

impl SlotKey {
    pub fn new(day: DayOfWeek, minutes_since_midnight: u32) -> Self {
        let slot = (minutes_since_midnight.min(24 * 60 - 1) / SLOT_MINUTES) as u8;
        Self { day, slot }
    }

    pub fn of(ts: &NaiveDateTime) -> Self {
        Self::new(DayOfWeek::of(ts), minutes_since_midnight(ts))
    }
}

/// Whole minutes elapsed since local midnight.
pub fn minutes_since_midnight(ts: &NaiveDateTime) -> u32 {
    ts.hour() * 60 + ts.minute()
}

/// Index of an activity within an [`Ontology`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActivityLabel(pub u16);

impl ActivityLabel {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OntologyError {
    #[error("ontology is empty")]
    Empty,
    #[error("duplicate label name `{0}`")]
    Duplicate(String),
    #[error("unknown label `{0}`")]
    UnknownName(String),
    #[error("label index {0} out of range")]
    UnknownIndex(usize),
}

/// Canonical lowercase form of a raw annotation (`Meal_Preparation` -> `meal_preparation`).
pub fn canonical_name(raw: &str) -> String {
    raw.trim().to_ascii_lowercase()
}

/// Bijection between label indices and canonical names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Ontology {
    names: Vec<String>,
    #[serde(skip)]
    lookup: HashMap<String, ActivityLabel>,
}

impl Ontology {
    pub fn new<I, S>(names: I) -> Result<Self, OntologyError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let names: Vec<String> = names.into_iter().map(|n| canonical_name(n.as_ref())).collect();
        if names.is_empty() {
            return Err(OntologyError::Empty);
        }
        let mut lookup = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if lookup.insert(name.clone(), ActivityLabel(i as u16)).is_some() {
                return Err(OntologyError::Duplicate(name.clone()));
            }
        }
        Ok(Self { names, lookup })
    }

    /// Sorted working ontology for a set of observed canonical names. The
    /// synthetic `being_outside` label is always present.
    pub fn from_observed<'a, I>(observed: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut names: Vec<String> = observed.into_iter().map(canonical_name).collect();
        names.push(BEING_OUTSIDE.to_string());
        names.sort();
        names.dedup();
        Self::new(names).expect("non-empty and deduplicated")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, label: ActivityLabel) -> &str {
        &self.names[label.index()]
    }

    pub fn get(&self, name: &str) -> Option<ActivityLabel> {
        self.lookup.get(&canonical_name(name)).copied()
    }

    pub fn label(&self, name: &str) -> Result<ActivityLabel, OntologyError> {
        self.get(name)
            .ok_or_else(|| OntologyError::UnknownName(name.to_string()))
    }

    pub fn by_index(&self, index: usize) -> Result<ActivityLabel, OntologyError> {
        if index < self.names.len() {
            Ok(ActivityLabel(index as u16))
        } else {
            Err(OntologyError::UnknownIndex(index))
        }
    }

    pub fn labels(&self) -> impl Iterator<Item = ActivityLabel> + '_ {
        (0..self.names.len()).map(|i| ActivityLabel(i as u16))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl TryFrom<Vec<String>> for Ontology {
    type Error = OntologyError;

    fn try_from(names: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(names)
    }
}

impl From<Ontology> for Vec<String> {
    fn from(o: Ontology) -> Self {
        o.names
    }
}
