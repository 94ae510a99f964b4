//! Acceptance checks. Prints one PASS or FAIL line per criterion and exits
//! nonzero when any criterion fails. Criteria that need the Aruba log read
//! it from `ROUTINECAST_ARUBA` (or `data/aruba/data` at the repo root) and
//! fail when it is missing.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{Duration as Minutes, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use routinecast::backend::MockBackend;
use routinecast::baseline::{predict_next_baseline, Decoding};
use routinecast::evalmetrics::{
    classification_report, dtw_cost, duration_report, joint_success, GapPolicy, LabeledPair,
};
use routinecast::ingest::{build_intervals, chronological_split, parse_events, ParsedLog};
use routinecast::priors::{median, Priors};
use routinecast::promptkit::{ContextText, PromptTemplate};
use routinecast::retrieval::{
    build_instances, mmr_select, BuiltinEmbedder, EmbeddingVector, InstanceContext, Provenance, Split,
    Target, VectorIndex,
};
use routinecast::runner::{baseline_rollouts, eval_days, Experiment, ExperimentConfig, ExperimentParts, Task};
use routinecast::types::{ActivityLabel, SlotKey};

// Pinned tolerances and budgets.
const PARSER_BUDGET: Duration = Duration::from_secs(10);
const ARUBA_DATES: usize = 219;
const ARUBA_RAW_LABELS: usize = 11;
const PRIORS_TOL: f64 = 1e-9;
const PRIORS_BUDGET: Duration = Duration::from_secs(5);
const BASELINE_SEED: u64 = 42;
const BASELINE_SEEDS: usize = 20;
const BASELINE_NORM: f64 = 0.27;
const BASELINE_NORM_TOL: f64 = 0.05;
const BASELINE_RAW: f64 = 309.0;
const BASELINE_RAW_TOL: f64 = 60.0;
const BASELINE_BUDGET: Duration = Duration::from_secs(120);
const DTW_CASES: usize = 500;
const METRIC_CASES: usize = 1000;
const MACRO_F1_TOL: f64 = 1e-12;
const MMR_CASES: usize = 200;
const MMR_LAMBDAS: [f64; 5] = [0.0, 0.3, 0.5, 0.8, 1.0];
const E2E_BUDGET: Duration = Duration::from_secs(30);

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn load_aruba() -> Result<(ParsedLog, Duration), String> {
    let path = common::aruba_path().ok_or_else(|| {
        format!(
            "Aruba log not found; set {} or place it at data/aruba/data",
            common::ARUBA_ENV
        )
    })?;
    let started = Instant::now();
    let file = std::fs::File::open(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let parsed = parse_events(std::io::BufReader::new(file)).map_err(|e| e.to_string())?;
    Ok((parsed, started.elapsed()))
}

fn parser_fidelity(aruba: &Result<(ParsedLog, Duration), String>) -> Verdict {
    let (parsed, parse_time) = aruba.as_ref().map_err(Clone::clone)?;
    let started = Instant::now();
    let set = build_intervals(&parsed.events);
    let elapsed = *parse_time + started.elapsed();

    let raw_labels: BTreeSet<&str> = parsed
        .events
        .iter()
        .filter_map(|e| e.annotation.as_ref().map(|a| a.label.as_str()))
        .collect();
    ensure(parsed.report.distinct_dates == ARUBA_DATES, || {
        format!("{} distinct dates, expected {ARUBA_DATES}", parsed.report.distinct_dates)
    })?;
    ensure(raw_labels.len() == ARUBA_RAW_LABELS, || {
        format!("{} raw labels {raw_labels:?}, expected {ARUBA_RAW_LABELS}", raw_labels.len())
    })?;

    let count = |spans: &mut dyn Iterator<Item = String>| {
        let mut m: BTreeMap<String, usize> = BTreeMap::new();
        spans.for_each(|s| *m.entry(s).or_default() += 1);
        m
    };
    let got = count(&mut set.intervals.iter().map(|iv| set.ontology.name(iv.label).to_string()));
    let oracle = common::oracle_intervals(&parsed.events);
    let want = count(&mut oracle.iter().map(|s| s.0.clone()));
    ensure(got == want, || format!("per-label counts differ: {got:?} vs oracle {want:?}"))?;
    ensure(elapsed < PARSER_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} intervals, {} being_outside, {:?}",
        set.intervals.len(),
        got.get("being_outside").copied().unwrap_or(0),
        elapsed
    ))
}

fn priors_correctness() -> Verdict {
    let f = common::fixture(120, 31);
    let started = Instant::now();
    let p = Priors::estimate(f.ontology.clone(), &f.split.train).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let train = &f.split.train;
    let k = f.ontology.len();

    let mut brute = vec![vec![0u64; k]; k];
    for w in train.windows(2) {
        brute[w[0].label.index()][w[1].label.index()] += 1;
    }
    let mut checked = 0;
    for (prev, d) in &p.transitions.overall {
        let row = &brute[prev.index()];
        let total: u64 = row.iter().sum();
        for j in 0..k {
            let want = row[j] as f64 / total as f64;
            ensure((d.probabilities[j] - want).abs() <= PRIORS_TOL, || {
                format!("overall[{}][{j}] = {} vs {want}", prev.index(), d.probabilities[j])
            })?;
            checked += 1;
        }
    }
    let vectors = p
        .transitions
        .slot_level
        .values()
        .chain(p.transitions.day_level.values())
        .chain(p.transitions.overall.values());
    for d in vectors {
        let s: f64 = d.probabilities.iter().sum();
        ensure((s - 1.0).abs() <= PRIORS_TOL, || format!("vector sums to {s}"))?;
    }
    for (label, m) in &p.durations.global {
        let mut xs: Vec<f64> = train.iter().filter(|iv| iv.label == *label).map(|iv| iv.duration_minutes).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = xs.len();
        let want = if n % 2 == 1 { xs[n / 2] } else { (xs[n / 2 - 1] + xs[n / 2]) / 2.0 };
        ensure(*m == want, || format!("median for {} is {m}, sort oracle {want}", f.ontology.name(*label)))?;
    }
    ensure(elapsed < PRIORS_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{checked} overall entries, {} training intervals, {elapsed:?}", train.len()))
}

fn baseline_reproduction(aruba: &Result<(ParsedLog, Duration), String>) -> Verdict {
    let (parsed, _) = aruba.as_ref().map_err(Clone::clone)?;
    let started = Instant::now();
    let set = build_intervals(&parsed.events);
    let split = chronological_split(&set.intervals, 0.8).map_err(|e| e.to_string())?;
    let priors = Priors::estimate(set.ontology.clone(), &split.train).map_err(|e| e.to_string())?;
    let (days, _) = eval_days(&split.eval, GapPolicy::Keep).map_err(|e| e.to_string())?;
    let runs = baseline_rollouts(&priors, &days, BASELINE_SEED, BASELINE_SEEDS, GapPolicy::Keep)
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let norm = median(&mut runs.iter().map(|(d, _)| d.normalized).collect::<Vec<_>>()).ok_or("no rollouts")?;
    let raw = median(&mut runs.iter().map(|(d, _)| d.raw as f64).collect::<Vec<_>>()).ok_or("no rollouts")?;
    let detail = format!(
        "median normalized {norm:.4}, raw {raw:.1} min over {} days x {BASELINE_SEEDS} seeds, {elapsed:?}",
        days.len()
    );
    ensure((norm - BASELINE_NORM).abs() <= BASELINE_NORM_TOL, || detail.clone())?;
    ensure((raw - BASELINE_RAW).abs() <= BASELINE_RAW_TOL, || detail.clone())?;
    ensure(elapsed < BASELINE_BUDGET, || detail.clone())?;
    Ok(detail)
}

fn dtw_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..DTW_CASES {
        let mut seq = || {
            let len = rng.gen_range(1..=50);
            let alphabet = rng.gen_range(1..=6u8);
            (0..len).map(|_| rng.gen_range(0..alphabet)).collect::<Vec<u8>>()
        };
        let (a, b) = (seq(), seq());
        let got = dtw_cost(&a, &b);
        let want = common::reference_dtw(&a, &b);
        ensure(got == Some(want), || format!("case {case}: {got:?} vs {want}"))?;
    }
    Ok(format!("{DTW_CASES} sequence pairs"))
}

fn metric_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for case in 0..METRIC_CASES {
        let n = rng.gen_range(1..80);
        let k = rng.gen_range(1..10u16);
        let pairs: Vec<LabeledPair> = (0..n)
            .map(|_| {
                let truth = ActivityLabel(rng.gen_range(0..k));
                let td = rng.gen_range(0.5..400.0);
                if rng.gen_bool(0.05) {
                    LabeledPair::failed(truth, td)
                } else {
                    LabeledPair::new(truth, ActivityLabel(rng.gen_range(0..k)), td, rng.gen_range(0.5..400.0))
                }
            })
            .collect();
        let r = classification_report(&pairs).map_err(|e| e.to_string())?;
        ensure(r.micro.f1 == r.accuracy, || format!("case {case}: micro-F1 {} vs accuracy {}", r.micro.f1, r.accuracy))?;
        if let Ok(d) = duration_report(&pairs) {
            ensure(d.rmse >= d.mae, || format!("case {case}: RMSE {} < MAE {}", d.rmse, d.mae))?;
        }
        let mut last = 0.0;
        for t in [1.0, 5.0, 10.0, 15.0, 60.0] {
            let j = joint_success(&pairs, t).map_err(|e| e.to_string())?;
            ensure(j >= last, || format!("case {case}: joint success drops at T={t}"))?;
            last = j;
        }
    }
    let (a, b) = (ActivityLabel(0), ActivityLabel(1));
    let example = [
        LabeledPair::new(a, a, 10.0, 10.0),
        LabeledPair::new(b, a, 10.0, 10.0),
        LabeledPair::new(a, a, 10.0, 10.0),
    ];
    let macro_f1 = classification_report(&example).map_err(|e| e.to_string())?.macro_avg.f1;
    ensure((macro_f1 - 0.4).abs() <= MACRO_F1_TOL, || format!("hand example macro-F1 {macro_f1}"))?;
    Ok(format!("{METRIC_CASES} random sets, hand macro-F1 {macro_f1}"))
}

fn mmr_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let clock = NaiveDate::from_ymd_opt(2010, 11, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    for &lambda in &MMR_LAMBDAS {
        for case in 0..MMR_CASES {
            let size = rng.gen_range(1..150);
            let dim = rng.gen_range(2..16);
            let raw: Vec<Vec<f64>> = (0..size)
                .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let instances = (0..size)
                .map(|i| {
                    let mut c = InstanceContext::new(clock + Minutes::minutes(i as i64), vec![]);
                    c.target = Some(Target { label: ActivityLabel(0), duration_minutes: 1.0 });
                    c.provenance = Some(Provenance { split: Split::Train, target_index: i });
                    c
                })
                .collect();
            let index = VectorIndex::build(
                "acceptance",
                instances,
                raw.iter().map(|v| EmbeddingVector { values: v.clone() }).collect(),
            )
            .map_err(|e| e.to_string())?;
            let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = rng.gen_range(1..20);
            let got = mmr_select(&index, &EmbeddingVector { values: q.clone() }, n, lambda).items;
            let want = common::greedy_mmr(&raw, &q, n, lambda);
            ensure(got == want, || format!("lambda {lambda} case {case}: {got:?} vs {want:?}"))?;
            if lambda == 1.0 {
                let top: BTreeSet<usize> = common::scan_top_k(&raw, &q, n).into_iter().collect();
                let sel: BTreeSet<usize> = got.into_iter().collect();
                ensure(top == sel, || format!("lambda 1 case {case}: not the top-N set"))?;
            }
        }
    }
    Ok(format!("{} cases per lambda over {MMR_LAMBDAS:?}", MMR_CASES))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_routinecast"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("`routinecast {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

fn end_to_end_determinism() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |rel: &str| tmp.path().join(rel).to_string_lossy().into_owned();
    cli(&["synth", "--days", "60", "--seed", "7", "--out", &p("log.txt")])?;
    cli(&["ingest", "--input", &p("log.txt"), "--out", &p("data")])?;
    cli(&[
        "priors", "--train", &p("data/train.jsonl"), "--ontology", &p("data/ontology.json"), "--out", &p("priors.json"),
    ])?;
    let mut reports = Vec::new();
    let mut slowest = Duration::ZERO;
    for out in ["run_a", "run_b"] {
        let started = Instant::now();
        cli(&[
            "run", "--task", "next", "--backend", "mock", "--seed", "42", "--priors", &p("priors.json"), "--data",
            &p("data"), "--out", &p(out),
        ])?;
        slowest = slowest.max(started.elapsed());
        reports.push(std::fs::read(Path::new(&p(out)).join("report.json")).map_err(|e| e.to_string())?);
        let stats: serde_json::Value = serde_json::from_slice(
            &std::fs::read(Path::new(&p(out)).join("run_stats.json")).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        ensure(stats["network_calls"] == 0, || format!("network calls: {}", stats["network_calls"]))?;
    }
    ensure(reports[0] == reports[1], || "report.json differs between runs".into())?;
    ensure(slowest < E2E_BUDGET, || format!("slowest run took {slowest:?}"))?;
    Ok(format!("{} byte report, identical; 0 network calls; slowest run {slowest:?}", reports[0].len()))
}

fn mock_equals_argmax(rt: &tokio::runtime::Runtime) -> Verdict {
    let f = common::fixture(60, 7);
    let mut cfg = ExperimentConfig::new(Task::Next);
    cfg.seed = 42;
    let shots = cfg.shot_counts.clone();
    let exp = rt
        .block_on(Experiment::prepare(ExperimentParts {
            config: cfg,
            split: f.split.clone(),
            priors: Arc::new(f.priors.clone()),
            embedder: Arc::new(BuiltinEmbedder::new(&f.ontology)),
            backend: Arc::new(MockBackend::new(Arc::new(f.priors.clone()))),
            template: PromptTemplate::builtin(),
            persona: Some(ContextText::default_persona()),
            spatial: Some(ContextText::default_spatial()),
        }))
        .map_err(|e| e.to_string())?;
    let report = rt.block_on(exp.run()).map_err(|e| e.to_string())?;
    let na = report.next_activity.ok_or("no next-activity report")?;

    let mut all = f.split.train.clone();
    all.extend_from_slice(&f.split.eval);
    let (instances, _) = build_instances(&all, f.split.train.len()..all.len(), Split::Eval);
    let pairs = instances
        .iter()
        .map(|inst| {
            let t = inst.target.unwrap();
            let prev = inst.last().unwrap().label;
            predict_next_baseline(&f.priors, prev, SlotKey::of(&inst.clock), &mut Decoding::Argmax)
                .map(|p| LabeledPair::new(t.label, p.label, t.duration_minutes, p.duration_minutes))
                .map_err(|e| e.to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let want_cls = classification_report(&pairs).map_err(|e| e.to_string())?;
    let want_dur = duration_report(&pairs).map_err(|e| e.to_string())?;

    for r in &na.per_shot {
        ensure(r.parse_failures == 0 && r.regenerations == 0 && r.backend_failures == 0, || {
            format!(
                "N={}: {} parse failures, {} regenerations, {} backend failures",
                r.shots, r.parse_failures, r.regenerations, r.backend_failures
            )
        })?;
        ensure(r.scored == instances.len(), || format!("N={}: scored {} of {}", r.shots, r.scored, instances.len()))?;
        ensure(r.classification.as_ref() == Some(&want_cls), || format!("N={}: classification differs", r.shots))?;
        ensure(r.duration.as_ref() == Some(&want_dur), || format!("N={}: duration metrics differ", r.shots))?;
    }
    Ok(format!(
        "{} instances x N in {shots:?}: 100% parsed, accuracy {:.4}",
        instances.len(),
        want_cls.accuracy
    ))
}

fn main() {
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    let aruba = load_aruba();

    let checks: Vec<(&str, Box<dyn FnOnce() -> Verdict + '_>)> = vec![
        ("parser fidelity on Aruba", Box::new(|| parser_fidelity(&aruba))),
        ("priors correctness", Box::new(priors_correctness)),
        ("Markov baseline reproduction", Box::new(|| baseline_reproduction(&aruba))),
        ("DTW oracle equivalence", Box::new(dtw_oracle)),
        ("metric identities", Box::new(metric_identities)),
        ("MMR oracle equivalence", Box::new(mmr_oracle)),
        ("end-to-end determinism", Box::new(end_to_end_determinism)),
        ("mock pipeline equals argmax baseline", Box::new(|| mock_equals_argmax(&rt))),
    ];

    let mut failed = 0;
    for (name, check) in checks {
        let verdict = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_text(&p))));
        match verdict {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {failed} criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}
