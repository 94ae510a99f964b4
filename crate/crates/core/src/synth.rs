//! Synthetic CASAS-format logs of a single resident with a noisy daily
//! routine. Used for demos and tests when the real dataset is unavailable.

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Raw label spellings, as they appear in Aruba annotations.
pub const RAW_LABELS: [&str; 11] = [
    "Bed_to_Toilet",
    "Eating",
    "Enter_Home",
    "Housekeeping",
    "Leave_Home",
    "Meal_Preparation",
    "Relax",
    "Resperate",
    "Sleeping",
    "Wash_Dishes",
    "Work",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub start_date: NaiveDate,
    pub days: u32,
    pub seed: u64,
    /// Probability of inserting a garbage line after any emitted line.
    pub malformed_rate: f64,
    /// Probability of a stray begin (orphaned by the real one) per activity.
    pub orphan_begin_rate: f64,
    /// Probability of a stray end right after an activity ends.
    pub orphan_end_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            start_date: NaiveDate::from_ymd_opt(2010, 11, 4).expect("valid date"),
            days: 30,
            seed: 7,
            malformed_rate: 0.0,
            orphan_begin_rate: 0.0,
            orphan_end_rate: 0.0,
        }
    }
}

/// An interval the ingest stage should recover, with leave/enter pairs
/// already folded into `being_outside`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthInterval {
    pub label: String,
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
}

#[derive(Debug, Clone)]
pub struct SynthLog {
    pub text: String,
    pub truth: Vec<TruthInterval>,
    /// Stray annotations that should surface as unmatched begins and ends.
    pub orphan_begins: usize,
    pub orphan_ends: usize,
    pub malformed_lines: usize,
}

struct Episode {
    raw: &'static str,
    start: NaiveDateTime,
    end: NaiveDateTime,
}

struct Planner {
    rng: ChaCha8Rng,
    clock: NaiveDateTime,
    episodes: Vec<Episode>,
    truth: Vec<TruthInterval>,
}

impl Planner {
    fn minutes(&mut self, lo: f64, hi: f64) -> Duration {
        let m = self.rng.gen_range(lo..hi);
        Duration::seconds((m * 60.0).round().max(1.0) as i64)
    }

    fn gap(&mut self) {
        let g = self.minutes(0.5, 8.0);
        self.clock += g;
    }

    fn act(&mut self, raw: &'static str, lo: f64, hi: f64) {
        self.gap();
        let start = self.clock;
        let end = start + self.minutes(lo, hi);
        self.episodes.push(Episode { raw, start, end });
        self.truth.push(TruthInterval {
            label: raw.to_ascii_lowercase(),
            start,
            end,
        });
        self.clock = end;
    }

    fn outing(&mut self, lo: f64, hi: f64) {
        self.gap();
        let leave_start = self.clock;
        let leave_end = leave_start + self.minutes(0.2, 2.0);
        let enter_start = leave_end + self.minutes(lo, hi);
        let enter_end = enter_start + self.minutes(0.2, 2.0);
        self.episodes.push(Episode {
            raw: "Leave_Home",
            start: leave_start,
            end: leave_end,
        });
        self.episodes.push(Episode {
            raw: "Enter_Home",
            start: enter_start,
            end: enter_end,
        });
        self.truth.push(TruthInterval {
            label: crate::types::BEING_OUTSIDE.to_string(),
            start: leave_start,
            end: enter_end,
        });
        self.clock = enter_end;
    }

    fn chance(&mut self, p: f64) -> bool {
        self.rng.gen_bool(p)
    }

    fn day(&mut self, date: NaiveDate) {
        let weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
        if self.chance(0.4) {
            self.act("Bed_to_Toilet", 2.0, 6.0);
            self.act("Sleeping", 60.0, 150.0);
        }
        self.act("Meal_Preparation", 8.0, 20.0);
        self.act("Eating", 10.0, 25.0);
        if self.chance(0.6) {
            self.act("Wash_Dishes", 4.0, 10.0);
        }
        self.act("Relax", 20.0, 70.0);
        if !weekend && self.chance(0.7) {
            self.act("Work", 40.0, 150.0);
        }
        if weekend && self.chance(0.5) {
            self.act("Housekeeping", 20.0, 60.0);
        }
        if self.chance(0.6) {
            self.outing(60.0, 200.0);
        }
        self.act("Meal_Preparation", 8.0, 25.0);
        self.act("Eating", 10.0, 30.0);
        self.act("Relax", 60.0, 180.0);
        if !weekend && self.chance(0.4) {
            self.act("Work", 40.0, 120.0);
        }
        if self.chance(0.15) {
            self.act("Resperate", 10.0, 20.0);
        }
        if self.chance(0.3) {
            self.outing(30.0, 90.0);
        }
        self.act("Meal_Preparation", 10.0, 35.0);
        self.act("Eating", 15.0, 30.0);
        if self.chance(0.5) {
            self.act("Wash_Dishes", 5.0, 15.0);
        }
        self.act("Relax", 60.0, 200.0);
        // Bedtime: sleep runs past midnight into the next morning.
        let bedtime = date.and_hms_opt(22, 0, 0).expect("valid time") + self.minutes(0.0, 90.0);
        if bedtime > self.clock {
            self.clock = bedtime;
        }
        let wake = (date + Duration::days(1)).and_hms_opt(5, 45, 0).expect("valid time")
            + self.minutes(0.0, 90.0);
        let start = self.clock + self.minutes(0.5, 5.0);
        let wake = wake.max(start + Duration::minutes(120));
        self.episodes.push(Episode {
            raw: "Sleeping",
            start,
            end: wake,
        });
        self.truth.push(TruthInterval {
            label: "sleeping".into(),
            start,
            end: wake,
        });
        self.clock = wake;
    }
}

const SENSORS: [&str; 6] = ["M003", "M007", "M012", "M019", "M021", "M026"];

fn line(ts: NaiveDateTime, sensor: &str, value: &str, ann: Option<(&str, &str)>) -> (NaiveDateTime, String) {
    let stamp = if ts.and_utc().timestamp_subsec_micros() == 0 {
        ts.format("%Y-%m-%d %H:%M:%S").to_string()
    } else {
        ts.format("%Y-%m-%d %H:%M:%S%.6f").to_string()
    };
    let mut s = format!("{stamp} {sensor} {value}");
    if let Some((label, marker)) = ann {
        s.push(' ');
        s.push_str(label);
        s.push(' ');
        s.push_str(marker);
    }
    (ts, s)
}

/// Generates `config.days` days of log starting with a wake-up on
/// `config.start_date`.
pub fn synthesize(config: &SynthConfig) -> SynthLog {
    let mut p = Planner {
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        clock: config.start_date.and_hms_opt(6, 30, 0).expect("valid time"),
        episodes: Vec::new(),
        truth: Vec::new(),
    };
    for d in 0..config.days {
        p.day(config.start_date + Duration::days(d as i64));
    }

    let mut lines: Vec<(NaiveDateTime, String)> = Vec::new();
    let mut orphan_begins = 0;
    let mut orphan_ends = 0;
    for ep in &p.episodes {
        let sensor = SENSORS[p.rng.gen_range(0..SENSORS.len())];
        if config.orphan_begin_rate > 0.0 && p.rng.gen_bool(config.orphan_begin_rate) {
            // A begin shortly before the real one; the real begin orphans it.
            let ts = ep.start - Duration::seconds(p.rng.gen_range(1..20));
            if !p.episodes.iter().any(|o| o.raw == ep.raw && o.end > ts && o.end < ep.start) {
                lines.push(line(ts, sensor, "ON", Some((ep.raw, "begin"))));
                orphan_begins += 1;
            }
        }
        lines.push(line(ep.start, sensor, "ON", Some((ep.raw, "begin"))));
        let span = (ep.end - ep.start).num_seconds();
        for _ in 0..p.rng.gen_range(0..4) {
            let off = Duration::microseconds(p.rng.gen_range(1..span.max(2)) * 1_000_000 - p.rng.gen_range(0..999_999));
            let ts = ep.start + off.max(Duration::microseconds(1));
            if ts < ep.end {
                let v = if p.rng.gen_bool(0.5) { "ON" } else { "OFF" };
                lines.push(line(ts, SENSORS[p.rng.gen_range(0..SENSORS.len())], v, None));
            }
        }
        lines.push(line(ep.end, sensor, "OFF", Some((ep.raw, "end"))));
        if config.orphan_end_rate > 0.0 && p.rng.gen_bool(config.orphan_end_rate) {
            let ts = ep.end + Duration::milliseconds(p.rng.gen_range(1..500));
            lines.push(line(ts, sensor, "OFF", Some((ep.raw, "end"))));
            orphan_ends += 1;
        }
    }
    // Stable sort keeps a begin ahead of an end sharing its timestamp order.
    lines.sort_by_key(|(ts, _)| *ts);

    let mut text = String::new();
    let mut malformed = 0;
    for (_, l) in &lines {
        text.push_str(l);
        text.push('\n');
        if config.malformed_rate > 0.0 && p.rng.gen_bool(config.malformed_rate) {
            text.push_str("2010-13-45 99:99:99 M001\n");
            malformed += 1;
        }
    }
    SynthLog {
        text,
        truth: p.truth,
        orphan_begins,
        orphan_ends,
        malformed_lines: malformed,
    }
}
