//! Response grading: anomaly score, likelihood-ratio test of
//! H0 (legitimate) against H1 (manipulated), and the confidence fed into
//! defense amplification.
//!
//! Throughout the crate "realism" is the quality-metric output (1 = real) and
//! "anomaly" is its complement, `1 - realism`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{FrameFeatures, ResponseTrace};

pub const LAMBDA_MIN: f64 = 1e-300;
pub const LAMBDA_MAX: f64 = 1e300;
pub const STDDEV_FLOOR: f64 = 1e-6;
pub const DEFAULT_REJECTION_THRESHOLD: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradeError {
    #[error("trace has no frames")]
    EmptyTrace,
    #[error("insufficient calibration data: {0}")]
    InsufficientData(String),
    #[error("invalid feature model: mean {mean}, stddev {stddev}")]
    InvalidModel { mean: f64, stddev: f64 },
    #[error("rejection threshold must be finite and > 0, got {0}")]
    InvalidThreshold(f64),
}

/// Per-frame likelihood under one hypothesis.
pub trait FrameLikelihood {
    fn log_likelihood(&self, frame: &FrameFeatures) -> f64;
}

/// Univariate Gaussian over per-frame realism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureModel {
    pub mean: f64,
    pub stddev: f64,
}

impl FeatureModel {
    pub fn new(mean: f64, stddev: f64) -> Result<Self, GradeError> {
        let m = Self { mean, stddev };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), GradeError> {
        if self.mean.is_finite() && self.stddev.is_finite() && self.stddev > 0.0 {
            Ok(())
        } else {
            Err(GradeError::InvalidModel {
                mean: self.mean,
                stddev: self.stddev,
            })
        }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.stddev;
        -self.stddev.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z * z
    }

    /// Sample mean and unbiased sample standard deviation, floored at
    /// [`STDDEV_FLOOR`].
    pub fn fit(values: &[f64]) -> Result<Self, GradeError> {
        if values.len() < 2 {
            return Err(GradeError::InsufficientData(format!(
                "need at least 2 frames, got {}",
                values.len()
            )));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(Self {
            mean,
            stddev: var.sqrt().max(STDDEV_FLOOR),
        })
    }
}

impl FrameLikelihood for FeatureModel {
    fn log_likelihood(&self, frame: &FrameFeatures) -> f64 {
        self.log_pdf(frame.realism)
    }
}

/// The H0/H1 model pair, serialized as `{"h0": {...}, "h1": {...}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPair {
    pub h0: FeatureModel,
    pub h1: FeatureModel,
}

impl ModelPair {
    pub fn validate(&self) -> Result<(), GradeError> {
        self.h0.validate()?;
        self.h1.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradeResult {
    /// Mean anomaly over the trace's frames.
    pub q_bar: f64,
    /// L(H0) / L(H1), clamped to `[1e-300, 1e300]`.
    pub lambda: f64,
    /// Equal-prior posterior of H1.
    pub p: f64,
    pub reject_h0: bool,
}

/// Mean of `1 - realism` over the trace.
pub fn anomaly_score(trace: &ResponseTrace) -> Result<f64, GradeError> {
    if trace.frames.is_empty() {
        return Err(GradeError::EmptyTrace);
    }
    let sum: f64 = trace.frames.iter().map(FrameFeatures::anomaly).sum();
    Ok(sum / trace.frames.len() as f64)
}

/// `ln Λ`, summed frame by frame without clamping.
pub fn log_likelihood_ratio<M: FrameLikelihood>(
    trace: &ResponseTrace,
    h0: &M,
    h1: &M,
) -> Result<f64, GradeError> {
    if trace.frames.is_empty() {
        return Err(GradeError::EmptyTrace);
    }
    Ok(trace
        .frames
        .iter()
        .map(|f| h0.log_likelihood(f) - h1.log_likelihood(f))
        .sum())
}

pub fn likelihood_ratio<M: FrameLikelihood>(
    trace: &ResponseTrace,
    h0: &M,
    h1: &M,
) -> Result<f64, GradeError> {
    let log_lambda = log_likelihood_ratio(trace, h0, h1)?;
    Ok(log_lambda.exp().clamp(LAMBDA_MIN, LAMBDA_MAX))
}

/// Posterior probability of manipulation under equal priors.
pub fn confidence_from_ratio(lambda: f64) -> f64 {
    1.0 / (1.0 + lambda)
}

pub fn grade<M: FrameLikelihood>(
    trace: &ResponseTrace,
    h0: &M,
    h1: &M,
    s: f64,
) -> Result<GradeResult, GradeError> {
    if !(s.is_finite() && s > 0.0) {
        return Err(GradeError::InvalidThreshold(s));
    }
    let q_bar = anomaly_score(trace)?;
    let lambda = likelihood_ratio(trace, h0, h1)?;
    Ok(GradeResult {
        q_bar,
        lambda,
        p: confidence_from_ratio(lambda),
        reject_h0: lambda < s,
    })
}

/// Fits H0 on pooled genuine frames and H1 on pooled manipulated frames.
pub fn fit_models(
    genuine_traces: &[ResponseTrace],
    fake_traces: &[ResponseTrace],
) -> Result<ModelPair, GradeError> {
    let pool = |label: &str, traces: &[ResponseTrace]| -> Result<FeatureModel, GradeError> {
        if traces.len() < 2 {
            return Err(GradeError::InsufficientData(format!(
                "{label}: need at least 2 traces, got {}",
                traces.len()
            )));
        }
        let values: Vec<f64> = traces.iter().flat_map(|t| t.realism()).collect();
        FeatureModel::fit(&values)
            .map_err(|e| GradeError::InsufficientData(format!("{label}: {e}")))
    };
    Ok(ModelPair {
        h0: pool("genuine", genuine_traces)?,
        h1: pool("fake", fake_traces)?,
    })
}
