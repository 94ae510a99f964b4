use serde::{Deserialize, Serialize};

use super::timeline::DailyTimeline;
use super::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtwResult {
    /// Minutes of disagreement after optimal warping.
    pub raw: u64,
    /// `raw / T_day`, with `T_day` the ground-truth timeline length.
    pub normalized: f64,
}

/// Full (unbanded) DTW cost under a 0/1 mismatch cost, using two rolling rows.
///
/// `D(i,j) = [a_i != b_j] + min(D(i-1,j), D(i,j-1), D(i-1,j-1))`.
/// Returns `None` if either side is empty.
pub fn dtw_cost<T: PartialEq>(a: &[T], b: &[T]) -> Option<u64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let mut prev = vec![u64::MAX; b.len() + 1];
    let mut curr = vec![u64::MAX; b.len() + 1];
    prev[0] = 0;
    for x in a {
        curr[0] = u64::MAX;
        for (j, y) in b.iter().enumerate() {
            let best = prev[j + 1].min(curr[j]).min(prev[j]);
            curr[j + 1] = best + u64::from(x != y);
        }
        std::mem::swap(&mut prev, &mut curr);
        prev[0] = u64::MAX;
    }
    Some(prev[b.len()])
}

/// Aligns a predicted timeline against the ground truth.
pub fn dtw(truth: &DailyTimeline, predicted: &DailyTimeline) -> Result<DtwResult, MetricsError> {
    let raw = dtw_cost(&truth.minutes, &predicted.minutes)
        .ok_or(MetricsError::Empty("dtw timeline"))?;
    Ok(DtwResult {
        raw,
        normalized: raw as f64 / truth.len() as f64,
    })
}
