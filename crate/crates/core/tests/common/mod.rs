#![allow(dead_code)]

use std::path::PathBuf;

use chrono::NaiveDateTime;
use routinecast::ingest::{build_intervals, chronological_split, parse_events, Marker, RawEvent, SplitDataset};
use routinecast::priors::Priors;
use routinecast::synth::{synthesize, SynthConfig};
use routinecast::types::Ontology;

pub const ARUBA_ENV: &str = "ROUTINECAST_ARUBA";

/// Location of the raw Aruba log, if one is available.
pub fn aruba_path() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os(ARUBA_ENV) {
        let p = PathBuf::from(p);
        return p.is_file().then_some(p);
    }
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    ["data/aruba/data", "data/aruba/data.txt", "data/aruba.txt"]
        .iter()
        .map(|rel| root.join(rel))
        .find(|p| p.is_file())
}

/// Interval list as (label name, start, end).
pub type NamedSpan = (String, NaiveDateTime, NaiveDateTime);

/// Independent naive reimplementation of interval matching.
///
/// A begin at position i pairs with an end at j when both carry the same
/// label and no other marker of that label sits between them. Home blocks
/// are then read in start order: an enter block directly preceded by a
/// leave block forms one out-of-home span. Finally spans are scanned in
/// start order and any span starting before the end of a kept span is
/// dropped.
pub fn oracle_intervals(events: &[RawEvent]) -> Vec<NamedSpan> {
    let marks: Vec<(NaiveDateTime, String, Marker)> = events
        .iter()
        .filter_map(|e| {
            e.annotation
                .as_ref()
                .map(|a| (e.timestamp, a.label.to_lowercase(), a.marker))
        })
        .collect();

    let mut pairs: Vec<NamedSpan> = Vec::new();
    for j in 0..marks.len() {
        if marks[j].2 != Marker::End {
            continue;
        }
        let label = &marks[j].1;
        let prev = (0..j).rev().find(|&i| &marks[i].1 == label);
        if let Some(i) = prev {
            if marks[i].2 == Marker::Begin {
                pairs.push((label.clone(), marks[i].0, marks[j].0));
            }
        }
    }

    let mut home: Vec<NamedSpan> = Vec::new();
    let mut spans: Vec<NamedSpan> = Vec::new();
    for p in pairs {
        if p.0 == "leave_home" || p.0 == "enter_home" {
            home.push(p);
        } else {
            spans.push(p);
        }
    }
    home.sort_by_key(|s| s.1);
    for k in 1..home.len() {
        if home[k].0 == "enter_home" && home[k - 1].0 == "leave_home" {
            spans.push(("being_outside".to_string(), home[k - 1].1, home[k].2));
        }
    }

    let mut spans: Vec<NamedSpan> = spans.into_iter().filter(|s| s.2 > s.1).collect();
    spans.sort_by_key(|s| s.1);
    let mut kept: Vec<NamedSpan> = Vec::new();
    for s in spans {
        let clashes = kept.iter().any(|k| s.1 < k.2 && k.1 <= s.1);
        if !clashes {
            kept.push(s);
        }
    }
    kept
}

/// Synthetic dataset pushed through ingest and priors estimation.
pub struct Fixture {
    pub events: Vec<RawEvent>,
    pub ontology: Ontology,
    pub split: SplitDataset,
    pub priors: Priors,
}

pub fn fixture(days: u32, seed: u64) -> Fixture {
    let log = synthesize(&SynthConfig {
        days,
        seed,
        ..SynthConfig::default()
    });
    let parsed = parse_events(log.text.as_bytes()).expect("synthetic log parses");
    let set = build_intervals(&parsed.events);
    let split = chronological_split(&set.intervals, 0.8).expect("enough intervals");
    let priors = Priors::estimate(set.ontology.clone(), &split.train).expect("priors");
    Fixture {
        events: parsed.events,
        ontology: set.ontology,
        split,
        priors,
    }
}

/// Full-matrix reference DP, written from the recurrence.
pub fn reference_dtw(a: &[u8], b: &[u8]) -> u64 {
    let inf = u64::MAX / 2;
    let (n, m) = (a.len(), b.len());
    let mut d = vec![vec![inf; m + 1]; n + 1];
    d[0][0] = 0;
    for i in 1..=n {
        for j in 1..=m {
            let c = u64::from(a[i - 1] != b[j - 1]);
            d[i][j] = c + d[i - 1][j].min(d[i][j - 1]).min(d[i - 1][j - 1]);
        }
    }
    d[n][m]
}

/// Cosine similarity, 0 when either side is the zero vector.
pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for k in 0..a.len() {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Indices of the k most similar vectors, ties to the lower index.
pub fn scan_top_k(vectors: &[Vec<f64>], q: &[f64], k: usize) -> Vec<usize> {
    let mut all: Vec<(usize, f64)> = vectors.iter().enumerate().map(|(i, v)| (i, cos(q, v))).collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.into_iter().take(k).map(|(i, _)| i).collect()
}

/// Greedy MMR over the top max(50, 5n) candidates, scored from scratch each round.
pub fn greedy_mmr(vectors: &[Vec<f64>], q: &[f64], n: usize, lambda: f64) -> Vec<usize> {
    let pool_size = std::cmp::max(50, 5 * n);
    let mut pool = scan_top_k(vectors, q, pool_size);
    pool.sort();
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < n && chosen.len() < pool.len() {
        let mut best: Option<(usize, f64)> = None;
        for &c in &pool {
            if chosen.contains(&c) {
                continue;
            }
            let rel = cos(q, &vectors[c]);
            let score = if chosen.is_empty() {
                rel
            } else {
                let red = chosen
                    .iter()
                    .map(|&s| cos(&vectors[c], &vectors[s]))
                    .fold(f64::NEG_INFINITY, f64::max);
                lambda * rel - (1.0 - lambda) * red
            };
            // Pool is in ascending index order, so strict > keeps the lower index on ties.
            if best.map_or(true, |(_, b)| score > b) {
                best = Some((c, score));
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen
}
