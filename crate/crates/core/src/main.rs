use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use routinecast::backend::{
    Backend, CachedBackend, HttpBackend, HttpConfig, MockBackend, ThrottleConfig, Throttled,
    API_BASE_ENV, API_KEY_ENV, DEFAULT_API_BASE, DEFAULT_MODEL,
};
use routinecast::evalmetrics::GapPolicy;
use routinecast::ingest::{
    build_intervals, chronological_split, parse_events, read_intervals, write_intervals,
    ActivityInterval,
};
use routinecast::priors::{median, Priors};
use routinecast::promptkit::{ContextText, PromptTemplate};
use routinecast::retrieval::{BuiltinEmbedder, Embedder, HttpEmbedder, HttpEmbedderConfig};
use routinecast::runner::{
    baseline_rollouts, emit_report, eval_days, Experiment, ExperimentConfig, ExperimentParts,
    RunStats, Task,
};
use routinecast::synth::{synthesize, SynthConfig};
use routinecast::types::Ontology;

#[derive(Parser)]
#[command(name = "routinecast", version, about = "Activity forecasting on smart-home event logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a CASAS log into activity intervals and split them chronologically.
    Ingest(IngestArgs),
    /// Estimate transition and duration priors from the training split.
    Priors(PriorsArgs),
    /// Sampled Markov rollouts over the evaluation days, scored by DTW.
    Baseline(BaselineArgs),
    /// Run a few-shot experiment.
    Run(RunArgs),
    /// Write a synthetic CASAS-format log.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    /// Output directory for train.jsonl, eval.jsonl, ontology.json and ingest_report.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    split: f64,
}

#[derive(Args)]
struct PriorsArgs {
    #[arg(long)]
    train: PathBuf,
    /// Defaults to ontology.json next to the training file.
    #[arg(long)]
    ontology: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    priors: PathBuf,
    /// Evaluation intervals (JSONL).
    #[arg(long)]
    eval: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Rollouts per day, with seeds seed, seed + 1, ...
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    #[arg(long, value_enum, default_value = "keep")]
    gap: GapPolicy,
    /// Output JSONL, one line per (day, seed).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Mock,
    Http,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EmbedKind {
    Builtin,
    Http,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    task: Task,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,10")]
    shots: Vec<usize>,
    #[arg(long, value_enum, default_value = "mock")]
    backend: BackendKind,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    priors: PathBuf,
    /// Directory written by `ingest`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    mmr_lambda: f64,
    #[arg(long, value_enum, default_value = "keep")]
    gap: GapPolicy,
    #[arg(long, value_delimiter = ',', default_value = "5,10,15")]
    tolerances: Vec<f64>,
    #[arg(long, default_value = DEFAULT_MODEL)]
    model: String,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 64)]
    max_output_tokens: u32,
    #[arg(long, default_value_t = 3)]
    max_regenerations: u32,
    #[arg(long, default_value_t = 20)]
    baseline_seeds: usize,
    /// Response cache directory; defaults to <out>/cache.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    no_cache: bool,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    #[arg(long, value_enum, default_value = "builtin")]
    embed_backend: EmbedKind,
    #[arg(long, default_value = "text-embedding-3-small")]
    embed_model: String,
    /// Persona text file; the bundled persona is used otherwise.
    #[arg(long)]
    persona: Option<PathBuf>,
    #[arg(long)]
    no_persona: bool,
    #[arg(long)]
    spatial: Option<PathBuf>,
    #[arg(long)]
    no_spatial: bool,
    #[arg(long)]
    template: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 60)]
    days: u32,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    malformed_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    orphan_rate: f64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Priors(a) => priors(a),
        Command::Baseline(a) => baseline(a),
        Command::Run(a) => {
            let rt = tokio::runtime::Runtime::new().context("starting async runtime")?;
            rt.block_on(run(a))
        }
        Command::Synth(a) => synth(a),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_ontology(path: &Path) -> Result<Ontology> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing ontology {}", path.display()))
}

fn load_intervals(path: &Path, ontology: &Ontology) -> Result<Vec<ActivityInterval>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_intervals(BufReader::new(f), ontology).with_context(|| format!("reading {}", path.display()))
}

fn load_priors(path: &Path) -> Result<Priors> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Priors::from_json(&text).with_context(|| format!("parsing priors {}", path.display()))
}

fn ingest(a: IngestArgs) -> Result<()> {
    let f = File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let parsed = parse_events(BufReader::new(f))?;
    let set = build_intervals(&parsed.events);
    let split = chronological_split(&set.intervals, a.split)?;
    fs::create_dir_all(&a.out)?;
    for (name, ivs) in [("train.jsonl", &split.train), ("eval.jsonl", &split.eval)] {
        let path = a.out.join(name);
        let w = BufWriter::new(File::create(&path)?);
        write_intervals(w, ivs, &set.ontology).with_context(|| format!("writing {}", path.display()))?;
    }
    write_json(&a.out.join("ontology.json"), &set.ontology)?;
    write_json(
        &a.out.join("ingest_report.json"),
        &serde_json::json!({
            "parse": parsed.report,
            "intervals": set.report,
            "split_fraction": a.split,
            "train": split.train.len(),
            "eval": split.eval.len(),
        }),
    )?;
    println!(
        "{} events, {} malformed lines, {} dates; {} intervals ({} train, {} eval), {} labels",
        parsed.report.events,
        parsed.report.malformed,
        parsed.report.distinct_dates,
        set.intervals.len(),
        split.train.len(),
        split.eval.len(),
        set.ontology.len()
    );
    Ok(())
}

fn priors(a: PriorsArgs) -> Result<()> {
    let onto_path = match a.ontology {
        Some(p) => p,
        None => a
            .train
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("ontology.json"),
    };
    let ontology = read_ontology(&onto_path)?;
    let train = load_intervals(&a.train, &ontology)?;
    let priors = Priors::estimate(ontology, &train)?;
    fs::write(&a.out, priors.to_json()).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "{} slot-level, {} day-level and {} overall transition rows from {} intervals",
        priors.transitions.slot_level.len(),
        priors.transitions.day_level.len(),
        priors.transitions.overall.len(),
        train.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct BaselineRecord<'a> {
    day_id: &'a str,
    seed: u64,
    stream: usize,
    #[serde(with = "ts")]
    span_start: chrono::NaiveDateTime,
    #[serde(with = "ts")]
    span_end: chrono::NaiveDateTime,
    t_day: usize,
    dtw_raw: u64,
    dtw_normalized: f64,
    steps: Vec<StepRecord<'a>>,
}

#[derive(Serialize)]
struct StepRecord<'a> {
    label: &'a str,
    #[serde(with = "ts")]
    start: chrono::NaiveDateTime,
    duration_minutes: f64,
}

mod ts {
    pub fn serialize<S: serde::Serializer>(t: &chrono::NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&routinecast::ingest::format_timestamp(t))
    }
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let priors = load_priors(&a.priors)?;
    let eval = load_intervals(&a.eval, &priors.ontology)?;
    let (days, skipped) = eval_days(&eval, a.gap)?;
    for s in &skipped {
        tracing::info!(day = %s.day_id, reason = %s.reason, "day skipped");
    }
    if days.is_empty() {
        bail!("no evaluation day is usable for rollout ({} skipped)", skipped.len());
    }
    let rollouts = baseline_rollouts(&priors, &days, a.seed, a.seeds, a.gap)?;
    let mut w = BufWriter::new(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
    for (i, (d, steps)) in rollouts.iter().enumerate() {
        let day = &days[i % days.len()];
        let rec = BaselineRecord {
            day_id: &d.day_id,
            seed: d.seed.expect("baseline rollouts are seeded"),
            stream: day.day_index,
            span_start: day.span_start,
            span_end: day.span_end,
            t_day: d.t_day,
            dtw_raw: d.raw,
            dtw_normalized: d.normalized,
            steps: steps
                .iter()
                .map(|s| StepRecord {
                    label: priors.ontology.name(s.label),
                    start: s.start,
                    duration_minutes: s.duration_minutes,
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let mut norm: Vec<f64> = rollouts.iter().map(|(d, _)| d.normalized).collect();
    let mut raw: Vec<f64> = rollouts.iter().map(|(d, _)| d.raw as f64).collect();
    println!(
        "{} days x {} seeds ({} days skipped): median normalized DTW {:.4}, median raw DTW {:.1} min",
        days.len(),
        a.seeds,
        skipped.len(),
        median(&mut norm).unwrap_or(f64::NAN),
        median(&mut raw).unwrap_or(f64::NAN)
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let log = synthesize(&SynthConfig {
        days: a.days,
        seed: a.seed,
        malformed_rate: a.malformed_rate,
        orphan_begin_rate: a.orphan_rate,
        orphan_end_rate: a.orphan_rate,
        ..SynthConfig::default()
    });
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&a.out, log.text).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{} days, {} intervals", a.days, log.truth.len());
    Ok(())
}

fn context_text(path: Option<&Path>, disabled: bool, default: fn() -> ContextText) -> Result<Option<ContextText>> {
    if disabled {
        return Ok(None);
    }
    match path {
        None => Ok(Some(default())),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(Some(ContextText::new(&text)?))
        }
    }
}

struct Stack {
    backend: Arc<dyn Backend>,
    cache: Option<Arc<CachedBackend<Arc<dyn Backend>>>>,
    throttle: Option<Arc<Throttled<HttpBackend>>>,
}

fn backend_stack(a: &RunArgs, priors: Arc<Priors>) -> Result<Stack> {
    let mut throttle = None;
    let inner: Arc<dyn Backend> = match a.backend {
        BackendKind::Mock => Arc::new(MockBackend::new(priors)),
        BackendKind::Http => {
            let config = HttpConfig::from_env();
            if config.api_key.is_none() {
                tracing::warn!("{API_KEY_ENV} is not set; requests go out unauthenticated");
            }
            let t = Arc::new(Throttled::new(
                HttpBackend::new(config)?,
                ThrottleConfig {
                    concurrency: a.concurrency,
                    ..ThrottleConfig::default()
                },
            ));
            throttle = Some(t.clone());
            t
        }
    };
    if a.no_cache {
        return Ok(Stack {
            backend: inner,
            cache: None,
            throttle,
        });
    }
    let dir = a.cache_dir.clone().unwrap_or_else(|| a.out.join("cache"));
    let cache = Arc::new(CachedBackend::new(inner, dir)?);
    Ok(Stack {
        backend: cache.clone(),
        cache: Some(cache),
        throttle,
    })
}

async fn run(a: RunArgs) -> Result<()> {
    let started = Instant::now();
    let priors = Arc::new(load_priors(&a.priors)?);
    let data_onto = read_ontology(&a.data.join("ontology.json"))?;
    if data_onto != priors.ontology {
        bail!("priors ontology does not match {}", a.data.join("ontology.json").display());
    }
    let train = load_intervals(&a.data.join("train.jsonl"), &priors.ontology)?;
    let eval = load_intervals(&a.data.join("eval.jsonl"), &priors.ontology)?;
    let split_fraction = train.len() as f64 / (train.len() + eval.len()).max(1) as f64;

    let template = match &a.template {
        Some(p) => PromptTemplate::parse(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => PromptTemplate::builtin(),
    };
    let persona = context_text(a.persona.as_deref(), a.no_persona, ContextText::default_persona)?;
    let spatial = context_text(a.spatial.as_deref(), a.no_spatial, ContextText::default_spatial)?;

    let embedder: Arc<dyn Embedder> = match a.embed_backend {
        EmbedKind::Builtin => Arc::new(BuiltinEmbedder::new(&priors.ontology)),
        EmbedKind::Http => {
            let base = std::env::var(API_BASE_ENV).unwrap_or_else(|_| DEFAULT_API_BASE.into());
            let mut c = HttpEmbedderConfig::new(base, a.embed_model.clone());
            c.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
            c.timeout = Duration::from_secs(60);
            Arc::new(HttpEmbedder::new(c, priors.ontology.clone())?)
        }
    };
    let stack = backend_stack(&a, priors.clone())?;

    let mut config = ExperimentConfig::new(a.task);
    config.shot_counts = a.shots.clone();
    config.seed = a.seed;
    config.mmr_lambda = a.mmr_lambda;
    config.tolerances = a.tolerances.clone();
    config.gap_policy = a.gap;
    config.backend = match a.backend {
        BackendKind::Mock => "mock".into(),
        BackendKind::Http => "http".into(),
    };
    config.embed_backend = embedder.backend_id();
    config.model_id = a.model.clone();
    config.temperature = a.temperature;
    config.max_output_tokens = a.max_output_tokens;
    config.max_regenerations = a.max_regenerations;
    config.baseline_seeds = a.baseline_seeds;
    config.concurrency = a.concurrency;

    let exp = Experiment::prepare(ExperimentParts {
        config,
        split: routinecast::ingest::SplitDataset {
            train,
            eval,
            split_fraction,
        },
        priors,
        embedder,
        backend: stack.backend.clone(),
        template,
        persona,
        spatial,
    })
    .await?;
    let report = exp.run().await?;
    let stats = RunStats {
        config_hash: report.hashes.config.clone(),
        wall_clock_ms: started.elapsed().as_millis() as u64,
        network_calls: stack.backend.network_calls(),
        retrieval_queries: exp.retriever.query_count(),
        cache_hits: stack.cache.as_ref().map(|c| c.hits()),
        cache_misses: stack.cache.as_ref().map(|c| c.misses()),
        transient_retries: stack.throttle.as_ref().map(|t| t.retries()),
    };
    let written = emit_report(&report, &stats, &a.out)?;
    for p in &written {
        println!("wrote {}", p.display());
    }
    if report.partial {
        bail!("run incomplete: backend failures are listed in report.json; rerun to resume from the cache");
    }
    Ok(())
}
