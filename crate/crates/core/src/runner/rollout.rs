use chrono::{Duration, NaiveDate, NaiveDateTime};
use futures::stream::{self, StreamExt};

use super::report::{BaselineArm, DayDtw, DaySpan, RolloutReport, RolloutShotResult, SkippedDay};
use super::{Experiment, RunError};
use crate::baseline::{advance, rollout_baseline, BaselineRng, Decoding, RolloutStep, MAX_ROLLOUT_STEPS};
use crate::evalmetrics::{dtw, expand_timeline, DailyTimeline, GapPolicy, TimedLabel};
use crate::ingest::ActivityInterval;
use crate::priors::{median, Priors};
use crate::retrieval::{HistoryItem, InstanceContext, HISTORY_WINDOW};
use crate::types::ActivityLabel;

/// One evaluation day ready for rollout.
#[derive(Debug, Clone)]
pub struct EvalDay {
    /// Position among the usable days; also the RNG stream for the baseline.
    pub day_index: usize,
    pub date: NaiveDate,
    /// The day's first completed activities, oldest first.
    pub seed: Vec<ActivityInterval>,
    pub span_start: NaiveDateTime,
    pub span_end: NaiveDateTime,
    pub truth: DailyTimeline,
}

impl EvalDay {
    pub fn day_id(&self) -> String {
        self.date.format("%Y-%m-%d").to_string()
    }

    pub fn seed_labels(&self) -> Vec<ActivityLabel> {
        self.seed.iter().map(|iv| iv.label).collect()
    }
}

/// Groups evaluation intervals by start date and keeps the days whose first
/// three activities finish before midnight. The span to predict runs from
/// the end of the third activity to the following midnight.
pub fn eval_days(
    eval: &[ActivityInterval],
    gap: GapPolicy,
) -> Result<(Vec<EvalDay>, Vec<SkippedDay>), RunError> {
    let mut dates: Vec<NaiveDate> = eval.iter().map(|iv| iv.start.date()).collect();
    dates.dedup();
    let mut days = Vec::new();
    let mut skipped = Vec::new();
    for date in dates {
        let day_id = date.format("%Y-%m-%d").to_string();
        let seed: Vec<ActivityInterval> = eval
            .iter()
            .filter(|iv| iv.start.date() == date)
            .take(HISTORY_WINDOW)
            .copied()
            .collect();
        if seed.len() < HISTORY_WINDOW {
            skipped.push(SkippedDay {
                day_id,
                reason: format!("only {} activities start that day", seed.len()),
            });
            continue;
        }
        let span_start = seed[HISTORY_WINDOW - 1].end;
        let span_end = date.and_hms_opt(0, 0, 0).expect("midnight") + Duration::days(1);
        if span_start >= span_end {
            skipped.push(SkippedDay {
                day_id,
                reason: "seed activities run past midnight".into(),
            });
            continue;
        }
        let spans: Vec<TimedLabel> = eval
            .iter()
            .filter(|iv| iv.end > span_start && iv.start < span_end)
            .map(TimedLabel::from)
            .collect();
        let truth = expand_timeline(day_id.clone(), &spans, span_start, span_end)?.apply(gap);
        if truth.is_empty() {
            skipped.push(SkippedDay {
                day_id,
                reason: "ground truth is all gap after gap policy".into(),
            });
            continue;
        }
        days.push(EvalDay {
            day_index: days.len(),
            date,
            seed,
            span_start,
            span_end,
            truth,
        });
    }
    Ok((days, skipped))
}

/// Scores a predicted rollout against the day's ground truth.
pub fn score_rollout(
    day: &EvalDay,
    steps: &[RolloutStep],
    seed: Option<u64>,
    gap: GapPolicy,
) -> Result<DayDtw, RunError> {
    let spans: Vec<TimedLabel> = steps.iter().map(TimedLabel::from).collect();
    let predicted = expand_timeline(day.day_id(), &spans, day.span_start, day.span_end)?.apply(gap);
    let r = dtw(&day.truth, &predicted)?;
    Ok(DayDtw {
        day_id: day.day_id(),
        seed,
        t_day: day.truth.len(),
        raw: r.raw,
        normalized: r.normalized,
        steps: steps.len(),
    })
}

/// One sampled Markov rollout per (day, seed), seeds `base_seed + k` for
/// `k < seeds`, each on the RNG stream of its day index.
pub fn baseline_rollouts(
    priors: &Priors,
    days: &[EvalDay],
    base_seed: u64,
    seeds: usize,
    gap: GapPolicy,
) -> Result<Vec<(DayDtw, Vec<RolloutStep>)>, RunError> {
    let mut out = Vec::with_capacity(days.len() * seeds);
    for k in 0..seeds as u64 {
        let seed = base_seed.wrapping_add(k);
        for day in days {
            let mut rng = BaselineRng::new(seed, day.day_index as u64);
            let steps = rollout_baseline(
                priors,
                &day.seed_labels(),
                day.span_start,
                day.span_end,
                &mut Decoding::Sample(&mut rng),
            )
            .map_err(|e| RunError::Other(format!("baseline rollout on {}: {e}", day.day_id())))?;
            out.push((score_rollout(day, &steps, Some(seed), gap)?, steps));
        }
    }
    Ok(out)
}

/// Autoregressive rollout through the backend: each reply becomes the
/// newest history item of the next query.
async fn llm_rollout(exp: &Experiment, day: &EvalDay, shots: usize) -> Result<Vec<RolloutStep>, String> {
    let mut history: Vec<HistoryItem> = day
        .seed
        .iter()
        .map(|iv| HistoryItem {
            label: iv.label,
            duration_minutes: iv.duration_minutes,
        })
        .collect();
    let mut clock = day.span_start;
    let mut steps = Vec::new();
    while clock < day.span_end {
        if steps.len() >= MAX_ROLLOUT_STEPS {
            return Err(format!("step limit {MAX_ROLLOUT_STEPS} reached"));
        }
        let ctx = InstanceContext::new(clock, history[history.len() - HISTORY_WINDOW..].to_vec());
        let qv = if shots > 0 {
            Some(exp.embed_one(&ctx).await.map_err(|e| e.to_string())?)
        } else {
            None
        };
        let attempted = exp
            .predict(&ctx, qv.as_ref(), shots)
            .await
            .map_err(|e| format!("backend error at step {}: {e}", steps.len()))?;
        let p = attempted.prediction.ok_or_else(|| {
            format!(
                "reply at step {} never parsed after {} attempts",
                steps.len(),
                attempted.attempts
            )
        })?;
        steps.push(RolloutStep {
            label: p.next_activity,
            start: clock,
            duration_minutes: p.duration_minutes,
        });
        history.push(HistoryItem {
            label: p.next_activity,
            duration_minutes: p.duration_minutes,
        });
        clock = advance(clock, p.duration_minutes);
    }
    Ok(steps)
}

fn median_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.collect();
    median(&mut v)
}

/// Daily rollouts for every shot count plus the sampled Markov baseline.
pub async fn run_rollout(exp: &Experiment) -> Result<RolloutReport, RunError> {
    let (days, skipped_days) = eval_days(&exp.split.eval, exp.config.gap_policy)?;
    if days.is_empty() {
        return Err(RunError::Config(format!(
            "no evaluation day is usable for rollout ({} skipped)",
            skipped_days.len()
        )));
    }

    let mut per_shot = Vec::with_capacity(exp.config.shot_counts.len());
    for &shots in &exp.config.shot_counts {
        let results: Vec<(usize, Result<Vec<RolloutStep>, String>)> = stream::iter(days.iter())
            .map(|day| async move { (day.day_index, llm_rollout(exp, day, shots).await) })
            .buffered(exp.config.concurrency)
            .collect()
            .await;
        let mut scored = Vec::new();
        let mut traces = Vec::new();
        let mut failed = Vec::new();
        for (i, r) in results {
            let day = &days[i];
            match r {
                Ok(steps) => {
                    scored.push(score_rollout(day, &steps, None, exp.config.gap_policy)?);
                    traces.push(steps);
                }
                Err(reason) => {
                    tracing::warn!(day = %day.day_id(), shots, %reason, "rollout failed");
                    failed.push(SkippedDay {
                        day_id: day.day_id(),
                        reason,
                    });
                }
            }
        }
        per_shot.push(RolloutShotResult {
            shots,
            median_normalized: median_of(scored.iter().map(|d| d.normalized)),
            median_raw: median_of(scored.iter().map(|d| d.raw as f64)),
            days: scored,
            traces,
            failed_days: failed,
        });
    }

    let per_day: Vec<DayDtw> = baseline_rollouts(
        &exp.priors,
        &days,
        exp.config.seed,
        exp.config.baseline_seeds,
        exp.config.gap_policy,
    )?
    .into_iter()
    .map(|(d, _)| d)
    .collect();
    let per_seed_median = per_day
        .chunks(days.len())
        .map(|c| median_of(c.iter().map(|d| d.normalized)).unwrap_or(f64::NAN))
        .collect();
    let baseline = BaselineArm {
        seeds: exp.config.baseline_seeds,
        median_normalized: median_of(per_day.iter().map(|d| d.normalized)),
        median_raw: median_of(per_day.iter().map(|d| d.raw as f64)),
        per_seed_median_normalized: per_seed_median,
        per_day,
    };

    Ok(RolloutReport {
        days: days
            .iter()
            .map(|d| DaySpan {
                day_id: d.day_id(),
                span_start: d.span_start,
                span_end: d.span_end,
                t_day: d.truth.len(),
                gap_minutes: d.truth.gap_minutes(),
            })
            .collect(),
        skipped_days,
        per_shot,
        baseline,
    })
}
