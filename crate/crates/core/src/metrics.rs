//! Challenge calculus: quality scores, the realism performance gap between a
//! genuine and a manipulated response, suite qualification against the minimum
//! degradation level `beta`, and the genuine pass-rate check against `eta`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty score sequence")]
    EmptySequence,
    #[error("quality score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("no gap samples for challenge `{0}`")]
    MissingGapData(String),
    #[error("invalid gap config: {0}")]
    InvalidConfig(String),
}

/// A realism score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QualityScore(f64);

impl QualityScore {
    pub fn new(value: f64) -> Result<Self, MetricsError> {
        if value.is_finite() && (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(MetricsError::ScoreOutOfRange(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QualityScore {
    type Error = MetricsError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<QualityScore> for f64 {
    fn from(q: QualityScore) -> f64 {
        q.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapConfig {
    pub beta: f64,
    pub eta: f64,
    pub epsilon: f64,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            beta: 0.15,
            eta: 0.9,
            epsilon: 0.1,
        }
    }
}

impl GapConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(MetricsError::InvalidConfig(format!(
                    "{name} must be in (0, 1], got {v}"
                )))
            }
        };
        unit("beta", self.beta)?;
        unit("eta", self.eta)?;
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(MetricsError::InvalidConfig(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// One genuine/manipulated response pair for the same challenge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSample {
    pub src: Vec<QualityScore>,
    pub fake: Vec<QualityScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChallengeGap {
    pub mean_gap: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualificationReport {
    pub beta: f64,
    pub per_challenge: BTreeMap<String, ChallengeGap>,
    pub qualified: BTreeSet<String>,
}

impl QualificationReport {
    /// Hardness in `[0, 1]`: each challenge's mean gap over the largest mean
    /// gap in the report, with negative gaps mapped to 0.
    pub fn hardness(&self) -> BTreeMap<String, f64> {
        let max = self
            .per_challenge
            .values()
            .map(|g| g.mean_gap)
            .fold(0.0f64, f64::max);
        self.per_challenge
            .iter()
            .map(|(id, g)| {
                let h = if max > 0.0 {
                    (g.mean_gap / max).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                (id.clone(), h)
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn mean(scores: &[QualityScore]) -> Result<f64, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptySequence);
    }
    Ok(scores.iter().map(|s| s.0).sum::<f64>() / scores.len() as f64)
}

/// `mean(src) - mean(fake)`, in `[-1, 1]`.
pub fn performance_gap(
    src_scores: &[QualityScore],
    fake_scores: &[QualityScore],
) -> Result<f64, MetricsError> {
    Ok(mean(src_scores)? - mean(fake_scores)?)
}

/// Averages the gap samples of every catalog challenge and keeps those whose
/// mean gap exceeds `cfg.beta`.
pub fn qualify_suite(
    catalog: &Catalog,
    gaps: &BTreeMap<String, Vec<GapSample>>,
    cfg: &GapConfig,
) -> Result<QualificationReport, MetricsError> {
    cfg.validate()?;
    let mut per_challenge = BTreeMap::new();
    let mut qualified = BTreeSet::new();
    for id in catalog.ids() {
        let samples = gaps
            .get(id)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| MetricsError::MissingGapData(id.to_string()))?;
        let mut total = 0.0;
        for s in samples {
            total += performance_gap(&s.src, &s.fake)?;
        }
        let mean_gap = total / samples.len() as f64;
        if mean_gap > cfg.beta {
            qualified.insert(id.to_string());
        }
        per_challenge.insert(
            id.to_string(),
            ChallengeGap {
                mean_gap,
                n_samples: samples.len(),
            },
        );
    }
    Ok(QualificationReport {
        beta: cfg.beta,
        per_challenge,
        qualified,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenuinePass {
    pub pass_fraction: f64,
    pub ok: bool,
}

/// Fraction of genuine stability samples below `epsilon`, pooled over all
/// challenges; `ok` when the fraction exceeds `eta`.
pub fn calibrate_genuine_pass(
    genuine_gaps: &BTreeMap<String, Vec<f64>>,
    cfg: &GapConfig,
) -> Result<GenuinePass, MetricsError> {
    cfg.validate()?;
    let mut total = 0usize;
    let mut below = 0usize;
    for samples in genuine_gaps.values() {
        if samples.is_empty() {
            return Err(MetricsError::EmptySequence);
        }
        total += samples.len();
        below += samples.iter().filter(|&&g| g < cfg.epsilon).count();
    }
    if total == 0 {
        return Err(MetricsError::EmptySequence);
    }
    let pass_fraction = below as f64 / total as f64;
    Ok(GenuinePass {
        pass_fraction,
        ok: pass_fraction > cfg.eta,
    })
}
