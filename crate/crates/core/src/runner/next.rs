use futures::stream::{self, StreamExt};

use super::report::{CoverageCounts, FailureRecord, JointSuccess, NextActivityReport, ShotResult};
use super::{Experiment, RunError};
use crate::evalmetrics::{classification_report, duration_report, joint_success, LabeledPair};
use crate::retrieval::{build_instances, EmbeddingVector, InstanceContext, Split, HISTORY_WINDOW};

/// Outcome of one instance under one shot count.
struct Outcome {
    target_index: usize,
    pair: Option<LabeledPair>,
    attempts: u32,
    failure: Option<FailureRecord>,
}

/// Next-activity prediction over every evaluation boundary, once per shot count.
///
/// Instances whose backend calls fail outright are left out of the metrics
/// and listed in the failure manifest; the report is then marked partial.
pub async fn run_next_activity(exp: &Experiment) -> Result<NextActivityReport, RunError> {
    let train_len = exp.split.train.len();
    let mut all = exp.split.train.clone();
    all.extend_from_slice(&exp.split.eval);
    let (instances, no_history) = build_instances(&all, train_len..all.len(), Split::Eval);

    let mut history_from_train = 0;
    for inst in &instances {
        let i = inst.provenance.map(|p| p.target_index).unwrap_or_default();
        if i < train_len + HISTORY_WINDOW {
            history_from_train += 1;
            tracing::debug!(target_index = i, "history reaches into the training split");
        }
    }

    let needs_retrieval = exp.config.shot_counts.iter().any(|&n| n > 0);
    let query_vecs: Vec<Option<EmbeddingVector>> = if needs_retrieval && !instances.is_empty() {
        exp.embedder.embed(&instances).await?.into_iter().map(Some).collect()
    } else {
        vec![None; instances.len()]
    };

    let mut per_shot = Vec::with_capacity(exp.config.shot_counts.len());
    let mut failures = Vec::new();
    for &shots in &exp.config.shot_counts {
        let outcomes: Vec<Outcome> = stream::iter(instances.iter().zip(&query_vecs))
            .map(|(inst, qv)| score_instance(exp, inst, qv.as_ref(), shots))
            .buffered(exp.config.concurrency)
            .collect()
            .await;
        let result = summarize(exp, shots, &outcomes)?;
        failures.extend(outcomes.into_iter().filter_map(|o| o.failure));
        per_shot.push(result);
    }

    Ok(NextActivityReport {
        coverage: CoverageCounts {
            eval_intervals: exp.split.eval.len(),
            lacking_history: no_history,
            instances: instances.len(),
            history_from_train,
        },
        per_shot,
        failures,
    })
}

async fn score_instance(
    exp: &Experiment,
    inst: &InstanceContext,
    qv: Option<&EmbeddingVector>,
    shots: usize,
) -> Outcome {
    let target = inst.target.expect("evaluation instances carry a target");
    let target_index = inst.provenance.map(|p| p.target_index).unwrap_or_default();
    match exp.predict(inst, qv, shots).await {
        Ok(a) => {
            let pair = match &a.prediction {
                Some(p) => LabeledPair::new(target.label, p.next_activity, target.duration_minutes, p.duration_minutes),
                None => {
                    tracing::debug!(target_index, shots, error = ?a.last_error, "reply never parsed");
                    LabeledPair::failed(target.label, target.duration_minutes)
                }
            };
            Outcome {
                target_index,
                pair: Some(pair),
                attempts: a.attempts,
                failure: None,
            }
        }
        Err(e) => Outcome {
            target_index,
            pair: None,
            attempts: 0,
            failure: Some(FailureRecord {
                shots,
                target_index,
                error: e.to_string(),
            }),
        },
    }
}

fn summarize(exp: &Experiment, shots: usize, outcomes: &[Outcome]) -> Result<ShotResult, RunError> {
    let pairs: Vec<LabeledPair> = outcomes.iter().filter_map(|o| o.pair).collect();
    let parse_failures = pairs.iter().filter(|p| !p.duration_valid()).count();
    let regenerations = outcomes
        .iter()
        .filter(|o| o.pair.is_some())
        .map(|o| o.attempts.saturating_sub(1) as usize)
        .sum();
    let backend_failures = outcomes.iter().filter(|o| o.failure.is_some()).count();
    if backend_failures > 0 {
        let first = outcomes.iter().find(|o| o.failure.is_some()).map(|o| o.target_index);
        tracing::warn!(shots, backend_failures, ?first, "instances lost to backend errors");
    }

    let classification = if pairs.is_empty() {
        None
    } else {
        Some(classification_report(&pairs)?)
    };
    let duration = if pairs.iter().any(|p| p.duration_valid()) {
        Some(duration_report(&pairs)?)
    } else {
        None
    };
    let mut joint = Vec::with_capacity(exp.config.tolerances.len());
    for &tol in &exp.config.tolerances {
        let v = if pairs.is_empty() { None } else { Some(joint_success(&pairs, tol)?) };
        joint.push(JointSuccess {
            tolerance_minutes: tol,
            value: v,
        });
    }
    Ok(ShotResult {
        shots,
        scored: pairs.len() - parse_failures,
        parse_failures,
        regenerations,
        backend_failures,
        classification,
        duration,
        joint_success: joint,
    })
}
