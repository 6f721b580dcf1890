//! The challenge-response protocol.
//!
//! A session builds a cascade for the participant, then for each challenge:
//! issues it, captures the response until the timeout, verifies compliance
//! (reissuing the same challenge on failure until the retry budget is spent),
//! grades the response, and folds the grade into the cumulative score `E`.
//! The session fails as soon as the running mean `E_bar` exceeds the threshold
//! and passes if it never does.
//!
//! [`SessionMachine`] is the step-by-step form used by the live service;
//! [`run_session`] drives it to completion against any [`ResponseSource`].

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{build_cascade, Cascade, CascadeError, Context, Sampling};
use crate::catalog::{Challenge, Channel};
use crate::grader::{grade, GradeError, GradeResult, ModelPair, DEFAULT_REJECTION_THRESHOLD};
use crate::trace::{ResponseTrace, TraceError};

/// Upper clamp applied to `p` before `ln(1 - p)` in confidence-positive mode.
pub const P_CLAMP: f64 = 1.0 - 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("suite is empty")]
    EmptySuite,
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Grade(#[from] GradeError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("confidence p = {0} is outside (0, 1]")]
    DomainError(f64),
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("response for `{got}` does not answer the pending challenge `{expected}`")]
    ChallengeMismatch { expected: String, got: String },
    #[error("session is already finished")]
    Finished,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// `E += ln(p) * q_bar`; scores are non-positive.
    Literal,
    /// `E += -ln(1 - p) * q_bar`; scores are non-negative.
    #[default]
    #[serde(alias = "confidence-positive")]
    ConfidencePositive,
}

impl ScoreMode {
    pub fn default_threshold(self) -> f64 {
        match self {
            ScoreMode::Literal => -1.0,
            ScoreMode::ConfidencePositive => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::Literal => "literal",
            ScoreMode::ConfidencePositive => "confidence-positive",
        }
    }
}

impl std::str::FromStr for ScoreMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "literal" => Ok(ScoreMode::Literal),
            "confidence-positive" | "confidence_positive" => Ok(ScoreMode::ConfidencePositive),
            other => Err(format!("unknown score mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(rename = "threshold_T")]
    pub threshold: f64,
    pub cascade_len: usize,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub score_mode: ScoreMode,
    /// Grader rejection threshold on the likelihood ratio.
    pub s: f64,
    pub rng_seed: u64,
    /// Stop at the first threshold crossing. Disabling it walks the whole
    /// cascade so that verdicts can be replayed for any threshold.
    #[serde(default = "yes")]
    pub early_exit: bool,
    #[serde(default)]
    pub sampling: Sampling,
}

fn yes() -> bool {
    true
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self::for_mode(ScoreMode::ConfidencePositive)
    }
}

impl SessionConfig {
    pub fn for_mode(score_mode: ScoreMode) -> Self {
        Self {
            threshold: score_mode.default_threshold(),
            cascade_len: 14,
            timeout_s: 10.0,
            max_retries: 3,
            score_mode,
            s: DEFAULT_REJECTION_THRESHOLD,
            rng_seed: 0,
            early_exit: true,
            sampling: Sampling::Deterministic,
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if self.cascade_len == 0 {
            return Err(SessionError::InvalidConfig("cascade_len must be >= 1".into()));
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err(SessionError::InvalidConfig(format!(
                "timeout_s must be > 0, got {}",
                self.timeout_s
            )));
        }
        if !(self.s.is_finite() && self.s > 0.0) {
            return Err(SessionError::InvalidConfig(format!("s must be > 0, got {}", self.s)));
        }
        if self.threshold.is_nan() {
            return Err(SessionError::InvalidConfig("threshold_T is NaN".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    ThresholdExceeded,
    VerificationExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub challenge_id: String,
    pub verified: bool,
    pub retry_index: u32,
    pub grade: Option<GradeResult>,
    pub increment: Option<f64>,
    /// Session clock at the end of this capture.
    pub timestamp_s: f64,
    /// Cumulative score after this step.
    #[serde(rename = "E")]
    pub score: f64,
    /// Running mean over graded steps after this step.
    #[serde(rename = "E_bar")]
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub participant_id: String,
    pub score_mode: ScoreMode,
    #[serde(rename = "threshold_T")]
    pub threshold: f64,
    pub cascade: Cascade,
    pub steps: Vec<StepRecord>,
    #[serde(rename = "E")]
    pub score: f64,
    /// `E` over the number of graded challenges; 0 when nothing was graded.
    #[serde(rename = "E_bar")]
    pub mean_score: f64,
    /// Largest running mean reached at any graded step.
    #[serde(rename = "peak_E_bar")]
    pub peak_mean_score: Option<f64>,
    pub verdict: Verdict,
    pub fail_reason: Option<FailReason>,
}

impl SessionRecord {
    pub fn graded_steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.steps.iter().filter(|s| s.grade.is_some())
    }

    /// Cumulative score after each graded challenge.
    pub fn trajectory(&self) -> Vec<f64> {
        self.graded_steps().map(|s| s.score).collect()
    }

    /// The verdict this transcript would have produced under `threshold` with
    /// early exit enabled.
    pub fn replay_verdict(&self, threshold: f64, max_retries: u32) -> (Verdict, Option<FailReason>) {
        for step in &self.steps {
            if step.grade.is_some() && step.mean_score > threshold {
                return (Verdict::Fail, Some(FailReason::ThresholdExceeded));
            }
            if !step.verified && step.retry_index >= max_retries {
                return (Verdict::Fail, Some(FailReason::VerificationExhausted));
            }
        }
        (Verdict::Pass, None)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("record serializes");
        s.push('\n');
        s
    }

    /// One row per step, with a header.
    pub fn to_csv(&self) -> String {
        records_to_csv(std::slice::from_ref(self))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn records_to_csv(records: &[SessionRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "participant_id",
        "step_index",
        "challenge_id",
        "retry_index",
        "verified",
        "q_bar",
        "p",
        "increment",
        "E",
        "E_bar",
        "verdict",
    ])
    .expect("in-memory csv");
    for r in records {
        let verdict = match r.verdict {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
        };
        for (i, s) in r.steps.iter().enumerate() {
            w.write_record([
                r.participant_id.clone(),
                i.to_string(),
                s.challenge_id.clone(),
                s.retry_index.to_string(),
                s.verified.to_string(),
                opt(s.grade.map(|g| g.q_bar)),
                opt(s.grade.map(|g| g.p)),
                opt(s.increment),
                s.score.to_string(),
                s.mean_score.to_string(),
                verdict.to_string(),
            ])
            .expect("in-memory csv");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Folds one graded response into the cumulative score.
pub fn amplify(score: f64, p: f64, q_bar: f64, mode: ScoreMode) -> Result<f64, SessionError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(SessionError::DomainError(p));
    }
    let q_bar = q_bar.clamp(0.0, 1.0);
    let increment = match mode {
        ScoreMode::Literal => p.ln() * q_bar,
        ScoreMode::ConfidencePositive => -(-p.min(P_CLAMP)).ln_1p() * q_bar,
    };
    Ok(score + increment)
}

/// Whether the trace's compliance channel sweeps at least `min_delta` within
/// any window of `within_s` seconds.
pub fn verify_response(challenge: &Challenge, trace: &ResponseTrace) -> Result<bool, TraceError> {
    if trace.frames.is_empty() {
        return Err(TraceError::Empty);
    }
    let spec = &challenge.compliance;
    if spec.channel == Channel::None {
        return Ok(true);
    }
    let values: Vec<f64> = trace
        .frames
        .iter()
        .map(|f| f.channel(spec.channel).unwrap_or(0.0))
        .collect();
    Ok(max_window_range(&values, trace.nominal_fps, spec.within_s) >= spec.min_delta)
}

/// Largest `max - min` over windows spanning at most `window_s` seconds,
/// using monotonic deques.
fn max_window_range(values: &[f64], fps: f64, window_s: f64) -> f64 {
    let span = (window_s * fps + 1e-9).floor() as usize;
    let mut maxq: VecDeque<usize> = VecDeque::new();
    let mut minq: VecDeque<usize> = VecDeque::new();
    let mut best = 0.0f64;
    for (j, &v) in values.iter().enumerate() {
        while maxq.back().is_some_and(|&k| values[k] <= v) {
            maxq.pop_back();
        }
        maxq.push_back(j);
        while minq.back().is_some_and(|&k| values[k] >= v) {
            minq.pop_back();
        }
        minq.push_back(j);
        let start = j.saturating_sub(span);
        while maxq.front().is_some_and(|&k| k < start) {
            maxq.pop_front();
        }
        while minq.front().is_some_and(|&k| k < start) {
            minq.pop_front();
        }
        best = best.max(values[maxq[0]] - values[minq[0]]);
    }
    best
}

/// Everything a verifier needs besides the participant: the qualified suite,
/// the participant's context, per-challenge hardness, and the grader models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub suite: Vec<Challenge>,
    pub context: Context,
    pub hardness: BTreeMap<String, f64>,
    pub models: ModelPair,
}

impl Protocol {
    pub fn cascade(&self, cfg: &SessionConfig) -> Result<Cascade, SessionError> {
        if self.suite.is_empty() {
            return Err(SessionError::EmptySuite);
        }
        Ok(build_cascade(
            &self.suite,
            &self.context,
            &self.hardness,
            cfg.cascade_len,
            cfg.sampling,
            cfg.rng_seed,
        )?)
    }
}

/// A participant's answer to an issued challenge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    Trace(ResponseTrace),
    Timeout,
}

/// Anything that can answer challenges: a simulated participant, a replay
/// file, or a live capture.
pub trait ResponseSource {
    fn participant_id(&self) -> &str;

    /// `attempt` is 0 for the first issue of a challenge and increments on
    /// every reissue.
    fn respond(&mut self, challenge: &Challenge, attempt: u32, timeout_s: f64) -> Response;
}

/// The challenge currently awaiting a response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingChallenge {
    pub challenge_id: String,
    pub cascade_index: usize,
    pub attempt: u32,
    pub timeout_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub step: StepRecord,
    pub next: Option<PendingChallenge>,
    pub verdict: Option<Verdict>,
    pub fail_reason: Option<FailReason>,
}

/// Incremental form of the protocol: issue, submit, repeat.
#[derive(Debug, Clone)]
pub struct SessionMachine {
    participant_id: String,
    cfg: SessionConfig,
    models: ModelPair,
    cascade: Cascade,
    challenges: Vec<Challenge>,
    steps: Vec<StepRecord>,
    index: usize,
    attempt: u32,
    clock_s: f64,
    score: f64,
    graded: usize,
    peak: Option<f64>,
    outcome: Option<(Verdict, Option<FailReason>)>,
}

impl SessionMachine {
    pub fn start(
        participant_id: impl Into<String>,
        protocol: &Protocol,
        cfg: &SessionConfig,
    ) -> Result<Self, SessionError> {
        cfg.validate()?;
        protocol.models.validate()?;
        let cascade = protocol.cascade(cfg)?;
        let challenges = cascade
            .ids()
            .map(|id| {
                protocol
                    .suite
                    .iter()
                    .find(|c| c.id == id)
                    .cloned()
                    .expect("cascade is drawn from the suite")
            })
            .collect();
        Ok(Self {
            participant_id: participant_id.into(),
            cfg: cfg.clone(),
            models: protocol.models,
            cascade,
            challenges,
            steps: Vec::new(),
            index: 0,
            attempt: 0,
            clock_s: 0.0,
            score: 0.0,
            graded: 0,
            peak: None,
            outcome: None,
        })
    }

    pub fn cascade(&self) -> &Cascade {
        &self.cascade
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn is_finished(&self) -> bool {
        self.outcome.is_some()
    }

    pub fn current_challenge(&self) -> Option<&Challenge> {
        if self.is_finished() {
            None
        } else {
            self.challenges.get(self.index)
        }
    }

    pub fn pending(&self) -> Option<PendingChallenge> {
        self.current_challenge().map(|c| PendingChallenge {
            challenge_id: c.id.clone(),
            cascade_index: self.index,
            attempt: self.attempt,
            timeout_s: self.cfg.timeout_s,
        })
    }

    fn mean(&self) -> f64 {
        if self.graded == 0 {
            0.0
        } else {
            self.score / self.graded as f64
        }
    }

    pub fn submit(&mut self, response: Response) -> Result<StepOutcome, SessionError> {
        let challenge = self.current_challenge().ok_or(SessionError::Finished)?.clone();
        let trace = match response {
            Response::Trace(t) => {
                if t.challenge_id != challenge.id {
                    return Err(SessionError::ChallengeMismatch {
                        expected: challenge.id.clone(),
                        got: t.challenge_id,
                    });
                }
                t.validate()?;
                Some(t.truncated(self.cfg.timeout_s))
            }
            Response::Timeout => None,
        };
        self.clock_s += trace.as_ref().map_or(self.cfg.timeout_s, |t| t.duration_s);

        let verified = match &trace {
            Some(t) => verify_response(&challenge, t)?,
            None => false,
        };

        let mut step = StepRecord {
            challenge_id: challenge.id.clone(),
            verified,
            retry_index: self.attempt,
            grade: None,
            increment: None,
            timestamp_s: self.clock_s,
            score: self.score,
            mean_score: self.mean(),
        };

        if !verified {
            if self.attempt >= self.cfg.max_retries {
                self.outcome = Some((Verdict::Fail, Some(FailReason::VerificationExhausted)));
            } else {
                self.attempt += 1;
            }
            return Ok(self.push(step));
        }

        let trace = trace.expect("verified implies a trace");
        let g = grade(&trace, &self.models.h0, &self.models.h1, self.cfg.s)?;
        let next = amplify(self.score, g.p, g.q_bar, self.cfg.score_mode)?;
        step.grade = Some(g);
        step.increment = Some(next - self.score);
        self.score = next;
        self.graded += 1;
        let mean = self.mean();
        step.score = self.score;
        step.mean_score = mean;
        self.peak = Some(self.peak.map_or(mean, |p: f64| p.max(mean)));

        if mean > self.cfg.threshold && self.cfg.early_exit {
            self.outcome = Some((Verdict::Fail, Some(FailReason::ThresholdExceeded)));
        } else {
            self.index += 1;
            self.attempt = 0;
            if self.index >= self.challenges.len() {
                let crossed = self.peak.is_some_and(|p| p > self.cfg.threshold);
                self.outcome = Some(if crossed {
                    (Verdict::Fail, Some(FailReason::ThresholdExceeded))
                } else {
                    (Verdict::Pass, None)
                });
            }
        }
        Ok(self.push(step))
    }

    fn push(&mut self, step: StepRecord) -> StepOutcome {
        self.steps.push(step.clone());
        StepOutcome {
            step,
            next: self.pending(),
            verdict: self.outcome.map(|o| o.0),
            fail_reason: self.outcome.and_then(|o| o.1),
        }
    }

    /// Transcript so far. Unfinished sessions report `Pass` with no reason.
    pub fn record(&self) -> SessionRecord {
        let (verdict, fail_reason) = self.outcome.unwrap_or((Verdict::Pass, None));
        SessionRecord {
            participant_id: self.participant_id.clone(),
            score_mode: self.cfg.score_mode,
            threshold: self.cfg.threshold,
            cascade: self.cascade.clone(),
            steps: self.steps.clone(),
            score: self.score,
            mean_score: self.mean(),
            peak_mean_score: self.peak,
            verdict,
            fail_reason,
        }
    }
}

/// Runs the full protocol against `participant`.
pub fn run_session(
    participant: &mut dyn ResponseSource,
    protocol: &Protocol,
    cfg: &SessionConfig,
) -> Result<SessionRecord, SessionError> {
    let mut machine = SessionMachine::start(participant.participant_id(), protocol, cfg)?;
    while let Some(challenge) = machine.current_challenge().cloned() {
        let attempt = machine.pending().map_or(0, |p| p.attempt);
        let response = participant.respond(&challenge, attempt, cfg.timeout_s);
        machine.submit(response)?;
    }
    Ok(machine.record())
}

/// Empirical `(1 - target_fp_rate)` quantile of the genuine peak running
/// means, interpolating linearly between order statistics.
pub fn calibrate_threshold(
    genuine_records: &[SessionRecord],
    target_fp_rate: f64,
) -> Result<f64, SessionError> {
    if !(target_fp_rate > 0.0 && target_fp_rate < 1.0) {
        return Err(SessionError::InvalidConfig(format!(
            "target false-positive rate must be in (0, 1), got {target_fp_rate}"
        )));
    }
    if genuine_records.len() < 20 {
        return Err(SessionError::InsufficientData(format!(
            "need at least 20 genuine records, got {}",
            genuine_records.len()
        )));
    }
    let mut values = genuine_records
        .iter()
        .map(|r| {
            r.peak_mean_score.ok_or_else(|| {
                SessionError::InsufficientData(format!(
                    "record `{}` has no graded challenge",
                    r.participant_id
                ))
            })
        })
        .collect::<Result<Vec<f64>, _>>()?;
    values.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&values, 1.0 - target_fp_rate))
}

pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Catalog, Mode};
    use crate::grader::FeatureModel;
    use crate::trace::FrameFeatures;
    use proptest::prelude::*;

    fn yaw_trace(yaws: &[f64], fps: f64) -> ResponseTrace {
        let frames = yaws
            .iter()
            .map(|&y| FrameFeatures {
                yaw_deg: y,
                ..FrameFeatures::neutral(0.9)
            })
            .collect();
        ResponseTrace::new("head-rotation", frames, fps, yaws.len() as f64 / fps).unwrap()
    }

    fn head_rotation() -> Challenge {
        Catalog::bundled().get("head-rotation").unwrap().clone()
    }

    /// Every window scanned explicitly.
    fn brute_force_range(values: &[f64], fps: f64, window_s: f64) -> f64 {
        let mut best = 0.0f64;
        for i in 0..values.len() {
            for j in i..values.len() {
                if (j - i) as f64 / fps <= window_s + 1e-9 {
                    let w = &values[i..=j];
                    let hi = w.iter().copied().fold(f64::MIN, f64::max);
                    let lo = w.iter().copied().fold(f64::MAX, f64::min);
                    best = best.max(hi - lo);
                }
            }
        }
        best
    }

    #[test]
    fn yaw_sweep_verifies() {
        let sweep: Vec<f64> = (0..=90).map(|i| -45.0 + i as f64).collect();
        assert!(verify_response(&head_rotation(), &yaw_trace(&sweep, 10.0)).unwrap());
        assert!(!verify_response(&head_rotation(), &yaw_trace(&[5.0; 50], 10.0)).unwrap());
    }

    #[test]
    fn slow_sweep_outside_window_fails() {
        // 40 degrees over 40 s never reaches 30 degrees inside a 10 s window.
        let slow: Vec<f64> = (0..=40).map(|i| i as f64).collect();
        assert!(!verify_response(&head_rotation(), &yaw_trace(&slow, 1.0)).unwrap());
    }

    #[test]
    fn expression_window_matches_brute_force() {
        use rand::Rng;
        let catalog = Catalog::bundled();
        let expression = catalog.get("expression").unwrap();
        let mut rng = crate::seed::rng(99);
        for _ in 0..50 {
            let n = rng.random_range(1..200);
            let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 0.6).collect();
            let frames = values
                .iter()
                .map(|&e| FrameFeatures {
                    expression_intensity: e,
                    ..FrameFeatures::neutral(0.9)
                })
                .collect();
            let trace = ResponseTrace::new("expression", frames, 15.0, n as f64 / 15.0).unwrap();
            let oracle = brute_force_range(&values, 15.0, expression.compliance.within_s);
            assert_eq!(max_window_range(&values, 15.0, expression.compliance.within_s), oracle);
            assert_eq!(
                verify_response(expression, &trace).unwrap(),
                oracle >= expression.compliance.min_delta
            );
        }
    }

    #[test]
    fn passive_challenges_always_verify() {
        let cutout = Catalog::bundled().get("cutout").unwrap().clone();
        assert_eq!(cutout.mode, Mode::Passive);
        let trace = ResponseTrace::new("cutout", vec![FrameFeatures::neutral(0.5)], 1.0, 1.0).unwrap();
        assert!(verify_response(&cutout, &trace).unwrap());
    }

    #[test]
    fn amplify_examples() {
        assert_eq!(amplify(2.0, 1.0, 0.7, ScoreMode::Literal).unwrap(), 2.0);
        for mode in [ScoreMode::Literal, ScoreMode::ConfidencePositive] {
            assert_eq!(amplify(1.5, 0.3, 0.0, mode).unwrap(), 1.5);
        }
        let v = amplify(0.0, (-1.0f64).exp(), 0.5, ScoreMode::Literal).unwrap();
        assert!((v + 0.5).abs() < 1e-15);
        let cp = amplify(0.0, 1.0, 1.0, ScoreMode::ConfidencePositive).unwrap();
        assert!((cp - (-(1.0 - P_CLAMP).ln())).abs() < 1e-3);
        assert!(cp.is_finite());
        for bad in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                amplify(0.0, bad, 0.5, ScoreMode::Literal),
                Err(SessionError::DomainError(_))
            ));
        }
    }

    #[test]
    fn threshold_quantiles() {
        let rec = |v: f64| SessionRecord {
            participant_id: "g".into(),
            score_mode: ScoreMode::ConfidencePositive,
            threshold: 1.0,
            cascade: Cascade { items: vec![], target_len: 1 },
            steps: vec![],
            score: v,
            mean_score: v,
            peak_mean_score: Some(v),
            verdict: Verdict::Pass,
            fail_reason: None,
        };
        let same: Vec<_> = (0..25).map(|_| rec(0.3)).collect();
        assert_eq!(calibrate_threshold(&same, 0.05).unwrap(), 0.3);

        let spread: Vec<_> = (0..20).map(|i| rec(i as f64)).collect();
        // Median of 0..=19 is 9.5.
        assert_eq!(calibrate_threshold(&spread, 0.5).unwrap(), 9.5);

        assert!(matches!(
            calibrate_threshold(&spread[..19], 0.5),
            Err(SessionError::InsufficientData(_))
        ));
        assert!(matches!(
            calibrate_threshold(&spread, 1.5),
            Err(SessionError::InvalidConfig(_))
        ));
    }

    fn protocol() -> Protocol {
        let catalog = Catalog::bundled();
        Protocol {
            suite: catalog.challenges().to_vec(),
            context: Context::permissive(1.0),
            hardness: catalog.ids().map(|id| (id.to_string(), 0.5)).collect(),
            models: ModelPair {
                h0: FeatureModel::new(0.95, 0.03).unwrap(),
                h1: FeatureModel::new(0.6, 0.15).unwrap(),
            },
        }
    }

    /// Answers every challenge with a perfectly realistic, fully compliant trace.
    struct Perfect;

    impl ResponseSource for Perfect {
        fn participant_id(&self) -> &str {
            "perfect"
        }

        fn respond(&mut self, c: &Challenge, _attempt: u32, _timeout: f64) -> Response {
            let frames = (0..20)
                .map(|i| {
                    let x = i as f64 / 19.0;
                    FrameFeatures {
                        realism: 1.0,
                        yaw_deg: 60.0 * x,
                        expression_intensity: x,
                        occlusion_fraction: x,
                        luminance_shift: x,
                        n_faces: 1,
                    }
                })
                .collect();
            Response::Trace(ResponseTrace::new(c.id.clone(), frames, 10.0, 2.0).unwrap())
        }
    }

    struct Stubborn;

    impl ResponseSource for Stubborn {
        fn participant_id(&self) -> &str {
            "stubborn"
        }

        fn respond(&mut self, c: &Challenge, _attempt: u32, _timeout: f64) -> Response {
            if c.mode == Mode::Passive {
                Perfect.respond(c, 0, 0.0)
            } else {
                Response::Timeout
            }
        }
    }

    #[test]
    fn perfect_participant_passes_with_zero_score() {
        let cfg = SessionConfig {
            cascade_len: 1,
            ..Default::default()
        };
        let mut p = protocol();
        p.suite.retain(|c| c.mode == Mode::Active);
        let r = run_session(&mut Perfect, &p, &cfg).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.score, 0.0);
        assert_eq!(r.steps.len(), 1);
    }

    #[test]
    fn non_compliant_participant_exhausts_retries() {
        let cfg = SessionConfig::default();
        let mut p = protocol();
        p.suite.retain(|c| c.mode == Mode::Active);
        let r = run_session(&mut Stubborn, &p, &cfg).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert_eq!(r.fail_reason, Some(FailReason::VerificationExhausted));
        assert_eq!(r.steps.len() as u32, cfg.max_retries + 1);
        assert!(r.steps.iter().all(|s| s.challenge_id == r.steps[0].challenge_id));
        assert_eq!(r.steps.last().unwrap().timestamp_s, 4.0 * cfg.timeout_s);
    }

    #[test]
    fn machine_rejects_foreign_and_late_responses() {
        let cfg = SessionConfig {
            cascade_len: 1,
            ..Default::default()
        };
        let p = protocol();
        let mut m = SessionMachine::start("x", &p, &cfg).unwrap();
        let pending = m.pending().unwrap();
        let other = p.suite.iter().find(|c| c.id != pending.challenge_id).unwrap();
        let Response::Trace(t) = Perfect.respond(other, 0, 10.0) else { unreachable!() };
        assert!(matches!(
            m.submit(Response::Trace(t)),
            Err(SessionError::ChallengeMismatch { .. })
        ));
        let mine = m.current_challenge().unwrap().clone();
        let out = m.submit(Perfect.respond(&mine, 0, 10.0)).unwrap();
        assert_eq!(out.verdict, Some(Verdict::Pass));
        assert!(out.next.is_none());
        assert_eq!(m.submit(Response::Timeout), Err(SessionError::Finished));
    }

    #[test]
    fn csv_has_header_and_one_row_per_step() {
        let mut p = protocol();
        p.suite.retain(|c| c.mode == Mode::Active);
        let r = run_session(&mut Stubborn, &p, &SessionConfig::default()).unwrap();
        let csv = r.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "participant_id,step_index,challenge_id,retry_index,verified,q_bar,p,increment,E,E_bar,verdict"
        );
        assert_eq!(lines.len(), r.steps.len() + 1);
        assert!(lines[1].ends_with(",0,false,,,,0,0,fail"), "{}", lines[1]);
    }

    proptest! {
        #[test]
        fn literal_increments_are_non_positive(score in -50.0f64..50.0, p in 1e-300f64..=1.0, q in 0.0f64..=1.0) {
            prop_assert!(amplify(score, p, q, ScoreMode::Literal).unwrap() <= score);
            prop_assert!(amplify(score, p, q, ScoreMode::ConfidencePositive).unwrap() >= score);
        }
    }
}
