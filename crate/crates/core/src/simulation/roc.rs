//! ROC curves over session scores.
//!
//! A session is flagged at threshold `T` when its score exceeds `T`. Scores of
//! `+inf` mark sessions that are flagged whatever the threshold.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

fn rate(scores: &[f64], threshold: f64) -> f64 {
    scores.iter().filter(|&&s| s > threshold).count() as f64 / scores.len() as f64
}

/// Operating points at every distinct finite score, from the strictest
/// threshold to one that flags everything. Empty when either class is empty.
pub fn roc_curve(negatives: &[f64], positives: &[f64]) -> Vec<RocPoint> {
    if negatives.is_empty() || positives.is_empty() {
        return Vec::new();
    }
    let mut thresholds: Vec<f64> = negatives
        .iter()
        .chain(positives)
        .copied()
        .filter(|s| s.is_finite())
        .collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    match thresholds.last() {
        Some(&lowest) => thresholds.push(lowest.next_down()),
        None => thresholds.push(f64::MAX),
    }
    thresholds
        .into_iter()
        .map(|t| RocPoint {
            threshold: t,
            fpr: rate(negatives, t),
            tpr: rate(positives, t),
        })
        .collect()
}

/// Trapezoidal area under `points`, anchored at the origin.
pub fn auc(points: &[RocPoint]) -> Option<f64> {
    if points.is_empty() {
        return None;
    }
    let mut area = 0.0;
    let (mut x, mut y) = (0.0, 0.0);
    for p in points {
        area += (p.fpr - x) * (p.tpr + y) / 2.0;
        x = p.fpr;
        y = p.tpr;
    }
    Some(area)
}
