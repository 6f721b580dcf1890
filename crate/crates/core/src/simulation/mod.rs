//! Seeded stand-ins for genuine participants and real-time deepfake
//! pipelines, and the harness that runs protocol sessions against them.
//!
//! Nothing here touches pixels: a pipeline is a per-challenge distribution
//! over frame realism plus a probability of following the challenge.

mod montecarlo;
pub mod profile;
pub mod roc;
pub mod synth;

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use montecarlo::{
    ParticipantOutcome, PipelineSummary, PopulationReport, Populations, Trajectory,
    TrajectoryPoint,
};
pub use profile::{
    ChallengeBehavior, PassiveTransform, PipelineProfile, ProfileError, ProfileKind, ProfileSet,
    TransformKind,
};
pub use synth::{apply_passive, fps_under_load, synthesize_response, CaptureConfig, SimulatedParticipant};

use crate::cascade::{suite_from_ids, Context};
use crate::catalog::Catalog;
use crate::grader::{fit_models, GradeError, ModelPair};
use crate::metrics::{
    calibrate_genuine_pass, performance_gap, qualify_suite, GapConfig, GapSample, GenuinePass,
    MetricsError, QualificationReport, QualityScore,
};
use crate::seed;
use crate::session::{
    calibrate_threshold, run_session, Protocol, ScoreMode, SessionConfig, SessionError,
    SessionRecord,
};
use crate::trace::{ResponseTrace, TraceError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Grade(#[from] GradeError),
    #[error("invalid capture: {0}")]
    InvalidCapture(String),
    #[error("invalid harness config: {0}")]
    InvalidConfig(String),
}

/// Knobs shared by every simulated population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    pub capture: CaptureConfig,
    pub gap: GapConfig,
    /// Pipeline the suite is qualified against.
    pub reference: ProfileKind,
    /// Genuine/manipulated response pairs per challenge for qualification.
    pub gap_samples: usize,
    /// Participants per class whose responses train the grader models.
    pub model_participants: usize,
    /// Standard deviation of the per-participant realism offset.
    pub participant_spread: f64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            capture: CaptureConfig::default(),
            gap: GapConfig::default(),
            reference: ProfileKind::Ldfl,
            gap_samples: 30,
            model_participants: 20,
            participant_spread: 0.06,
        }
    }
}

impl HarnessConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.gap.validate()?;
        if !(self.capture.fps.is_finite() && self.capture.fps > 0.0) {
            return Err(SimError::InvalidCapture(format!("fps must be > 0, got {}", self.capture.fps)));
        }
        if !(self.capture.duration_s.is_finite() && self.capture.duration_s > 0.0) {
            return Err(SimError::InvalidCapture(format!(
                "duration_s must be > 0, got {}",
                self.capture.duration_s
            )));
        }
        if self.gap_samples == 0 {
            return Err(SimError::InvalidConfig("gap_samples must be >= 1".into()));
        }
        if self.model_participants < 2 {
            return Err(SimError::InvalidConfig("model_participants must be >= 2".into()));
        }
        if !(self.participant_spread.is_finite() && self.participant_spread >= 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "participant_spread must be >= 0, got {}",
                self.participant_spread
            )));
        }
        Ok(())
    }
}

/// Threshold and grader models fitted on a genuine population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    #[serde(rename = "threshold_T")]
    pub threshold: f64,
    pub target_fp_rate: f64,
    pub n_genuine: usize,
    pub score_mode: ScoreMode,
    pub seed: u64,
    pub models: ModelPair,
}

impl Calibration {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("calibration serializes");
        s.push('\n');
        s
    }
}

/// Catalog, profiles and context bundled with the simulation settings.
#[derive(Debug, Clone)]
pub struct Harness {
    catalog: Catalog,
    profiles: ProfileSet,
    context: Context,
    config: HarnessConfig,
}

impl Harness {
    /// Profiles must cover every catalog challenge; orderings are not checked
    /// here (see [`ProfileSet::validate`]).
    pub fn new(
        catalog: Catalog,
        profiles: ProfileSet,
        context: Context,
        config: HarnessConfig,
    ) -> Result<Self, SimError> {
        config.validate()?;
        context.validate().map_err(SessionError::from)?;
        for p in profiles.iter() {
            for c in catalog.challenges() {
                p.behavior(&c.id)?;
            }
        }
        Ok(Self {
            catalog,
            profiles,
            context,
            config,
        })
    }

    /// Bundled catalog and profiles under `context`.
    pub fn bundled(context: Context) -> Self {
        Self::new(
            Catalog::bundled(),
            ProfileSet::bundled(),
            context,
            HarnessConfig::default(),
        )
        .expect("bundled harness")
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn profiles(&self) -> &ProfileSet {
        &self.profiles
    }

    pub fn context(&self) -> &Context {
        &self.context
    }

    pub fn config(&self) -> &HarnessConfig {
        &self.config
    }

    /// Participant `index` of the `kind` population seeded by `population_seed`.
    ///
    /// Each participant's realism is offset from the profile by a normal draw
    /// with standard deviation `participant_spread`.
    pub fn participant(&self, kind: ProfileKind, index: u64, population_seed: u64) -> SimulatedParticipant {
        let s = seed::derive(population_seed, kind.as_str(), index);
        let offset = if self.config.participant_spread > 0.0 {
            let normal = Normal::new(0.0, self.config.participant_spread).expect("validated spread");
            normal.sample(&mut seed::rng(seed::derive(s, "offset", 0)))
        } else {
            0.0
        };
        SimulatedParticipant::new(
            format!("{}-{index:03}", kind.as_str().to_lowercase()),
            self.profiles.get(kind).shifted(offset),
            self.config.capture,
            s,
        )
    }

    fn responses(&self, kind: ProfileKind, seed: u64, n: usize) -> Result<Vec<ResponseTrace>, SimError> {
        let duration = self.config.capture.duration_s;
        let mut out = Vec::new();
        for i in 0..n as u64 {
            let p = self.participant(kind, i, seed);
            for c in self.catalog.challenges() {
                out.push(p.trace(c, 0, duration)?);
            }
        }
        Ok(out)
    }

    fn scores(trace: &ResponseTrace) -> Result<Vec<QualityScore>, SimError> {
        Ok(trace
            .realism()
            .map(QualityScore::new)
            .collect::<Result<Vec<_>, _>>()?)
    }

    /// Genuine/manipulated response pairs for every catalog challenge.
    pub fn gap_samples(&self, fake: ProfileKind, seed: u64) -> Result<BTreeMap<String, Vec<GapSample>>, SimError> {
        let duration = self.config.capture.duration_s;
        let genuine = self.profiles.genuine();
        let manipulated = self.profiles.get(fake);
        let mut out = BTreeMap::new();
        for c in self.catalog.challenges() {
            let mut samples = Vec::with_capacity(self.config.gap_samples);
            for i in 0..self.config.gap_samples as u64 {
                let g = SimulatedParticipant::new("src", genuine.clone(), self.config.capture, seed::derive(seed, "gap/src", i));
                let f = SimulatedParticipant::new("fake", manipulated.clone(), self.config.capture, seed::derive(seed, "gap/fake", i));
                samples.push(GapSample {
                    src: Self::scores(&g.trace(c, 0, duration)?)?,
                    fake: Self::scores(&f.trace(c, 0, duration)?)?,
                });
            }
            out.insert(c.id.clone(), samples);
        }
        Ok(out)
    }

    pub fn qualify(&self, fake: ProfileKind, gap: &GapConfig, seed: u64) -> Result<QualificationReport, SimError> {
        let samples = self.gap_samples(fake, seed)?;
        Ok(qualify_suite(&self.catalog, &samples, gap)?)
    }

    /// Gaps between two independent genuine responses to the same challenge.
    pub fn genuine_stability(&self, seed: u64) -> Result<BTreeMap<String, Vec<f64>>, SimError> {
        let duration = self.config.capture.duration_s;
        let genuine = self.profiles.genuine();
        let mut out = BTreeMap::new();
        for c in self.catalog.challenges() {
            let mut gaps = Vec::with_capacity(self.config.gap_samples);
            for i in 0..self.config.gap_samples as u64 {
                let a = SimulatedParticipant::new("a", genuine.clone(), self.config.capture, seed::derive(seed, "stability/a", i));
                let b = SimulatedParticipant::new("b", genuine.clone(), self.config.capture, seed::derive(seed, "stability/b", i));
                let gap = performance_gap(
                    &Self::scores(&a.trace(c, 0, duration)?)?,
                    &Self::scores(&b.trace(c, 0, duration)?)?,
                )?;
                gaps.push(gap.abs());
            }
            out.insert(c.id.clone(), gaps);
        }
        Ok(out)
    }

    pub fn genuine_pass(&self, gap: &GapConfig, seed: u64) -> Result<GenuinePass, SimError> {
        Ok(calibrate_genuine_pass(&self.genuine_stability(seed)?, gap)?)
    }

    /// H0 from genuine participants, H1 pooled over the LDFL, FSGAN and HDFL
    /// populations.
    pub fn fit_models(&self, seed: u64) -> Result<ModelPair, SimError> {
        let n = self.config.model_participants;
        let genuine = self.responses(ProfileKind::Genuine, seed::derive(seed, "models", 0), n)?;
        let mut fake = Vec::new();
        for kind in [ProfileKind::Ldfl, ProfileKind::Fsgan, ProfileKind::Hdfl] {
            fake.extend(self.responses(kind, seed::derive(seed, "models", 1), n)?);
        }
        Ok(fit_models(&genuine, &fake)?)
    }

    /// Qualifies the catalog against the reference pipeline, derives
    /// hardness from the gaps, and fits the grader models.
    pub fn protocol(&self, seed: u64) -> Result<(Protocol, QualificationReport), SimError> {
        let report = self.qualify(self.config.reference, &self.config.gap, seed::derive(seed, "qualify", 0))?;
        let suite = suite_from_ids(&self.catalog, &report.qualified);
        if suite.is_empty() {
            return Err(SessionError::EmptySuite.into());
        }
        let protocol = Protocol {
            suite,
            context: self.context.clone(),
            hardness: report.hardness(),
            models: self.fit_models(seed::derive(seed, "models", 0))?,
        };
        Ok((protocol, report))
    }

    /// Runs `n` sessions of the `kind` population, in parallel, returned in
    /// participant order.
    pub fn run_population(
        &self,
        protocol: &Protocol,
        kind: ProfileKind,
        n: usize,
        cfg: &SessionConfig,
        population_seed: u64,
    ) -> Result<Vec<SessionRecord>, SimError> {
        cfg.validate()?;
        (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let mut p = self.participant(kind, i, population_seed);
                let session_cfg = SessionConfig {
                    rng_seed: seed::derive(population_seed, "cascade", i),
                    ..cfg.clone()
                };
                Ok(run_session(&mut p, protocol, &session_cfg)?)
            })
            .collect()
    }

    /// Sets the threshold at the `(1 - fp_rate)` quantile of a fresh genuine
    /// population's peak running mean.
    pub fn calibrate(
        &self,
        protocol: &Protocol,
        n_genuine: usize,
        target_fp_rate: f64,
        cfg: &SessionConfig,
        seed: u64,
    ) -> Result<Calibration, SimError> {
        let walk = SessionConfig {
            early_exit: false,
            ..cfg.clone()
        };
        let records = self.run_population(
            protocol,
            ProfileKind::Genuine,
            n_genuine,
            &walk,
            seed::derive(seed, "calibration", 0),
        )?;
        Ok(Calibration {
            threshold: calibrate_threshold(&records, target_fp_rate)?,
            target_fp_rate,
            n_genuine,
            score_mode: cfg.score_mode,
            seed,
            models: protocol.models,
        })
    }

    pub fn monte_carlo(
        &self,
        protocol: &Protocol,
        populations: &Populations,
        cfg: &SessionConfig,
        seed: u64,
    ) -> Result<PopulationReport, SimError> {
        montecarlo::run(self, protocol, populations, cfg, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn participants_are_order_independent() {
        let h = Harness::bundled(Context::permissive(0.9));
        let a = h.participant(ProfileKind::Hdfl, 7, 11);
        let _ = h.participant(ProfileKind::Hdfl, 3, 11);
        let b = h.participant(ProfileKind::Hdfl, 7, 11);
        assert_eq!(a.profile(), b.profile());
        assert_ne!(h.participant(ProfileKind::Hdfl, 8, 11).profile(), a.profile());
    }

    #[test]
    fn replayed_verdicts_match_early_exit() {
        let h = Harness::bundled(Context::preset("interview").unwrap());
        let (protocol, _) = h.protocol(3).unwrap();
        for mode in [ScoreMode::ConfidencePositive, ScoreMode::Literal] {
            let base = SessionConfig::for_mode(mode);
            let thresholds = match mode {
                ScoreMode::ConfidencePositive => [1e-9, 0.5, 1.0, 5.0],
                ScoreMode::Literal => [-5.0, -1.0, -0.1, -1e-9],
            };
            for kind in ProfileKind::ALL {
                for i in 0..6 {
                    let full_cfg = SessionConfig { early_exit: false, ..base.clone() };
                    let full = run_session(&mut h.participant(kind, i, 9), &protocol, &full_cfg).unwrap();
                    for t in thresholds {
                        let cfg = SessionConfig { threshold: t, ..base.clone() };
                        let early = run_session(&mut h.participant(kind, i, 9), &protocol, &cfg).unwrap();
                        assert_eq!(
                            full.replay_verdict(t, cfg.max_retries),
                            (early.verdict, early.fail_reason),
                            "{kind} #{i} at T={t} ({mode:?})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn fitted_means_are_ordered() {
        let h = Harness::bundled(Context::permissive(0.9));
        let m = h.fit_models(5).unwrap();
        assert!(m.h0.mean > m.h1.mean);
    }

    #[test]
    fn qualification_against_reference() {
        let h = Harness::bundled(Context::permissive(0.9));
        let r = h.qualify(ProfileKind::Ldfl, &GapConfig::default(), 1).unwrap();
        assert_eq!(r.qualified.len(), h.catalog().len());
        let strict = GapConfig {
            beta: 1.0,
            ..GapConfig::default()
        };
        assert!(h.qualify(ProfileKind::Ldfl, &strict, 1).unwrap().qualified.is_empty());
    }

    #[test]
    fn genuine_feeds_are_stable() {
        let h = Harness::bundled(Context::permissive(0.9));
        let pass = h.genuine_pass(&GapConfig::default(), 2).unwrap();
        assert!(pass.ok, "{pass:?}");
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = HarnessConfig {
            participant_spread: -1.0,
            ..HarnessConfig::default()
        };
        assert!(Harness::new(Catalog::bundled(), ProfileSet::bundled(), Context::permissive(0.5), cfg).is_err());
    }
}
