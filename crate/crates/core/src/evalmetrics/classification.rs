use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::types::ActivityLabel;

/// One scored instance. `pred_label`/`pred_duration` are `None` when the
/// model output never parsed; such instances count as misclassified and
/// are left out of duration aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub truth_label: ActivityLabel,
    pub pred_label: Option<ActivityLabel>,
    pub truth_duration: f64,
    pub pred_duration: Option<f64>,
}

impl LabeledPair {
    pub fn new(truth: ActivityLabel, pred: ActivityLabel, truth_duration: f64, pred_duration: f64) -> Self {
        Self {
            truth_label: truth,
            pred_label: Some(pred),
            truth_duration,
            pred_duration: Some(pred_duration),
        }
    }

    pub fn failed(truth: ActivityLabel, truth_duration: f64) -> Self {
        Self {
            truth_label: truth,
            pred_label: None,
            truth_duration,
            pred_duration: None,
        }
    }

    pub fn duration_valid(&self) -> bool {
        self.pred_duration.is_some()
    }

    pub fn is_correct(&self) -> bool {
        self.pred_label == Some(self.truth_label)
    }

    pub fn duration_error(&self) -> Option<f64> {
        self.pred_duration.map(|p| p - self.truth_duration)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub label: ActivityLabel,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averaged {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub n: usize,
    pub accuracy: f64,
    pub micro: Averaged,
    pub macro_avg: Averaged,
    pub weighted: Averaged,
    /// Classes present in the truth or the predictions, by label index.
    pub per_class: Vec<ClassStats>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    ratio(2 * tp, 2 * tp + fp + fn_)
}

/// Accuracy plus micro, macro and support-weighted precision/recall/F1.
///
/// Undefined per-class ratios (no predictions, or no support) are 0.
/// An unparsed prediction adds a false negative for its true class and a
/// false positive to the global count only, so micro scores equal accuracy.
pub fn classification_report(pairs: &[LabeledPair]) -> Result<ClassificationReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty("classification report"));
    }
    let n = pairs.len();
    let classes: BTreeSet<ActivityLabel> = pairs
        .iter()
        .flat_map(|p| std::iter::once(p.truth_label).chain(p.pred_label))
        .collect();

    let per_class: Vec<ClassStats> = classes
        .into_iter()
        .map(|c| {
            let mut s = ClassStats {
                label: c,
                tp: 0,
                fp: 0,
                fn_: 0,
                support: 0,
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
            };
            for p in pairs {
                let truth = p.truth_label == c;
                let pred = p.pred_label == Some(c);
                s.support += truth as usize;
                match (truth, pred) {
                    (true, true) => s.tp += 1,
                    (false, true) => s.fp += 1,
                    (true, false) => s.fn_ += 1,
                    (false, false) => {}
                }
            }
            s.precision = ratio(s.tp, s.tp + s.fp);
            s.recall = ratio(s.tp, s.tp + s.fn_);
            s.f1 = f1_from_counts(s.tp, s.fp, s.fn_);
            s
        })
        .collect();

    let tp: usize = pairs.iter().filter(|p| p.is_correct()).count();
    let (fp, fn_) = (n - tp, n - tp);
    let accuracy = ratio(tp, n);
    let micro = Averaged {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        f1: f1_from_counts(tp, fp, fn_),
    };

    let k = per_class.len() as f64;
    let macro_avg = Averaged {
        precision: per_class.iter().map(|s| s.precision).sum::<f64>() / k,
        recall: per_class.iter().map(|s| s.recall).sum::<f64>() / k,
        f1: per_class.iter().map(|s| s.f1).sum::<f64>() / k,
    };
    let weighted_mean = |f: fn(&ClassStats) -> f64| {
        per_class.iter().map(|s| s.support as f64 * f(s)).sum::<f64>() / n as f64
    };
    let weighted = Averaged {
        precision: weighted_mean(|s| s.precision),
        recall: weighted_mean(|s| s.recall),
        f1: weighted_mean(|s| s.f1),
    };

    Ok(ClassificationReport {
        n,
        accuracy,
        micro,
        macro_avg,
        weighted,
        per_class,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationReport {
    pub mae: f64,
    pub rmse: f64,
    pub n_valid: usize,
}

/// MAE and RMSE in minutes over pairs with a valid predicted duration.
pub fn duration_report(pairs: &[LabeledPair]) -> Result<DurationReport, MetricsError> {
    let errors: Vec<f64> = pairs.iter().filter_map(LabeledPair::duration_error).collect();
    if errors.is_empty() {
        return Err(MetricsError::Empty("duration report"));
    }
    let n = errors.len() as f64;
    let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / n;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    Ok(DurationReport {
        mae,
        rmse,
        n_valid: errors.len(),
    })
}

/// Fraction of pairs with the right label and `|duration error| <= tolerance`.
pub fn joint_success(pairs: &[LabeledPair], tolerance_minutes: f64) -> Result<f64, MetricsError> {
    if !(tolerance_minutes > 0.0) {
        return Err(MetricsError::Config(format!(
            "tolerance must be positive, got {tolerance_minutes}"
        )));
    }
    if pairs.is_empty() {
        return Err(MetricsError::Empty("joint success"));
    }
    let hits = pairs
        .iter()
        .filter(|p| {
            p.is_correct()
                && p.duration_error()
                    .is_some_and(|e| e.abs() <= tolerance_minutes)
        })
        .count();
    Ok(ratio(hits, pairs.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: ActivityLabel = ActivityLabel(0);
    const B: ActivityLabel = ActivityLabel(1);

    fn pair(t: ActivityLabel, p: ActivityLabel) -> LabeledPair {
        LabeledPair::new(t, p, 10.0, 10.0)
    }

    #[test]
    fn three_instance_example() {
        let pairs = [pair(A, A), pair(B, A), pair(A, A)];
        let r = classification_report(&pairs).unwrap();
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-12);
        let a = &r.per_class[0];
        assert!((a.precision - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.recall, 1.0);
        assert!((a.f1 - 0.8).abs() < 1e-12);
        let b = &r.per_class[1];
        assert_eq!((b.precision, b.recall, b.f1), (0.0, 0.0, 0.0));
        assert!((r.macro_avg.f1 - 0.4).abs() < 1e-12);
        assert_eq!(r.micro.f1, r.accuracy);
        // weighted: (2 * 0.8 + 1 * 0) / 3
        assert!((r.weighted.f1 - 1.6 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let pairs = [pair(A, A), pair(B, B), pair(ActivityLabel(5), ActivityLabel(5))];
        let r = classification_report(&pairs).unwrap();
        for v in [
            r.accuracy,
            r.micro.precision,
            r.micro.recall,
            r.micro.f1,
            r.macro_avg.precision,
            r.macro_avg.recall,
            r.macro_avg.f1,
            r.weighted.precision,
            r.weighted.recall,
            r.weighted.f1,
        ] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn failed_parses_are_misclassifications() {
        let pairs = [pair(A, A), LabeledPair::failed(B, 5.0)];
        let r = classification_report(&pairs).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.micro.precision, 0.5);
        assert_eq!(r.per_class[0].precision, 1.0);
        assert_eq!(r.per_class[1].fn_, 1);
        let d = duration_report(&pairs).unwrap();
        assert_eq!(d.n_valid, 1);
    }

    #[test]
    fn empty_input_errors() {
        assert!(classification_report(&[]).is_err());
        assert!(duration_report(&[LabeledPair::failed(A, 1.0)]).is_err());
        assert!(joint_success(&[], 5.0).is_err());
        assert!(joint_success(&[pair(A, A)], 0.0).is_err());
    }

    #[test]
    fn duration_formulas() {
        let pairs: Vec<_> = [1.0, -2.0, 3.0]
            .into_iter()
            .map(|e| LabeledPair::new(A, A, 10.0, 10.0 + e))
            .collect();
        let d = duration_report(&pairs).unwrap();
        assert!((d.mae - 2.0).abs() < 1e-12);
        assert!((d.rmse - (14.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let zero = duration_report(&[pair(A, A), pair(B, A)]).unwrap();
        assert_eq!((zero.mae, zero.rmse), (0.0, 0.0));
    }

    #[test]
    fn joint_success_is_inclusive() {
        let exact = LabeledPair::new(A, A, 30.0, 40.0);
        assert_eq!(joint_success(&[exact], 10.0).unwrap(), 1.0);
        let wrong = LabeledPair::new(A, B, 30.0, 30.0);
        assert_eq!(joint_success(&[wrong], 10.0).unwrap(), 0.0);
        let set = [
            LabeledPair::new(A, A, 30.0, 33.0),
            LabeledPair::new(B, B, 30.0, 25.0),
            LabeledPair::new(A, A, 30.0, 36.0),
            LabeledPair::new(B, A, 30.0, 30.0),
        ];
        assert_eq!(joint_success(&set, 5.0).unwrap(), 0.5);
    }
}
