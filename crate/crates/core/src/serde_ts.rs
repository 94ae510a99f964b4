//! Serde adapter writing timestamps as ISO-8601 with microseconds.

use chrono::NaiveDateTime;
use serde::{Deserialize, Deserializer, Serializer};

use crate::ingest::{format_timestamp, parse_timestamp};

pub fn serialize<S: Serializer>(ts: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format_timestamp(ts))
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
    let s = String::deserialize(d)?;
    parse_timestamp(&s).map_err(serde::de::Error::custom)
}
