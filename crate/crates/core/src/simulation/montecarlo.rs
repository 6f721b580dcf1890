//! Population runs and their report.

use serde::{Deserialize, Serialize};

use super::profile::ProfileKind;
use super::roc::{auc, roc_curve, RocPoint};
use super::{Harness, SimError};
use crate::seed;
use crate::session::{FailReason, Protocol, ScoreMode, SessionConfig, SessionRecord, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Populations {
    pub n_genuine: usize,
    pub n_per_pipeline: usize,
}

impl Default for Populations {
    fn default() -> Self {
        Self {
            n_genuine: 40,
            n_per_pipeline: 40,
        }
    }
}

impl Populations {
    pub fn count(&self, kind: ProfileKind) -> usize {
        if kind.is_fake() {
            self.n_per_pipeline
        } else {
            self.n_genuine
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantOutcome {
    pub pipeline: ProfileKind,
    pub participant_id: String,
    #[serde(rename = "E")]
    pub score: f64,
    #[serde(rename = "E_bar")]
    pub mean_score: f64,
    #[serde(rename = "peak_E_bar")]
    pub peak_mean_score: Option<f64>,
    pub exhausted: bool,
    pub verdict: Verdict,
    pub fail_reason: Option<FailReason>,
    /// Cumulative score after each graded challenge.
    pub trajectory: Vec<f64>,
}

impl ParticipantOutcome {
    /// Flagged at threshold `T` iff this exceeds `T`.
    pub fn detection_score(&self) -> f64 {
        if self.exhausted {
            f64::INFINITY
        } else {
            self.peak_mean_score.unwrap_or(f64::NEG_INFINITY)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub pipeline: ProfileKind,
    pub sessions: usize,
    /// Mean, standard deviation and standard error of the final `E_bar`.
    #[serde(rename = "mean_E_bar")]
    pub mean_final: f64,
    #[serde(rename = "std_E_bar")]
    pub std_final: f64,
    #[serde(rename = "se_E_bar")]
    pub se_final: f64,
    pub pass: usize,
    pub fail_threshold_exceeded: usize,
    pub fail_verification_exhausted: usize,
    /// Genuine sessions that failed.
    pub fpr: Option<f64>,
    /// Manipulated sessions that passed.
    pub fnr: Option<f64>,
    /// Against the genuine population; absent for the genuine row.
    pub auc: Option<f64>,
    pub roc: Vec<RocPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub k: usize,
    /// Sessions that graded at least `k` challenges.
    pub sessions: usize,
    #[serde(rename = "mean_E")]
    pub mean: f64,
    #[serde(rename = "std_E")]
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub pipeline: ProfileKind,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn at(&self, k: usize) -> Option<&TrajectoryPoint> {
        self.points.iter().find(|p| p.k == k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationReport {
    pub seed: u64,
    pub score_mode: ScoreMode,
    #[serde(rename = "threshold_T")]
    pub threshold: f64,
    pub cascade_len: usize,
    pub populations: Populations,
    pub summaries: Vec<PipelineSummary>,
    pub trajectories: Vec<Trajectory>,
    /// All manipulated sessions against all genuine sessions.
    pub roc: Vec<RocPoint>,
    pub participants: Vec<ParticipantOutcome>,
}

impl PopulationReport {
    pub fn summary(&self, kind: ProfileKind) -> Option<&PipelineSummary> {
        self.summaries.iter().find(|s| s.pipeline == kind)
    }

    pub fn trajectory(&self, kind: ProfileKind) -> Option<&Trajectory> {
        self.trajectories.iter().find(|t| t.pipeline == kind)
    }

    pub fn outcomes(&self, kind: ProfileKind) -> impl Iterator<Item = &ParticipantOutcome> {
        self.participants.iter().filter(move |p| p.pipeline == kind)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn trajectories_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["pipeline", "k", "mean_E", "std_E"]).expect("in-memory csv");
        for t in &self.trajectories {
            for p in &t.points {
                w.write_record([
                    t.pipeline.as_str().to_string(),
                    p.k.to_string(),
                    p.mean.to_string(),
                    p.std.to_string(),
                ])
                .expect("in-memory csv");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn roc_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["threshold", "fpr", "tpr"]).expect("in-memory csv");
        for p in &self.roc {
            w.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])
                .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn outcome(kind: ProfileKind, r: &SessionRecord, cfg: &SessionConfig) -> ParticipantOutcome {
    let (verdict, fail_reason) = r.replay_verdict(cfg.threshold, cfg.max_retries);
    ParticipantOutcome {
        pipeline: kind,
        participant_id: r.participant_id.clone(),
        score: r.score,
        mean_score: r.mean_score,
        peak_mean_score: r.peak_mean_score,
        exhausted: r.fail_reason == Some(FailReason::VerificationExhausted),
        verdict,
        fail_reason,
        trajectory: r.trajectory(),
    }
}

fn trajectory(kind: ProfileKind, outcomes: &[&ParticipantOutcome]) -> Trajectory {
    let longest = outcomes.iter().map(|o| o.trajectory.len()).max().unwrap_or(0);
    let points = (1..=longest)
        .map(|k| {
            let at_k: Vec<f64> = outcomes
                .iter()
                .filter_map(|o| o.trajectory.get(k - 1).copied())
                .collect();
            let (mean, std) = mean_std(&at_k);
            TrajectoryPoint {
                k,
                sessions: at_k.len(),
                mean,
                std,
            }
        })
        .collect();
    Trajectory {
        pipeline: kind,
        points,
    }
}

fn scores(outcomes: &[&ParticipantOutcome]) -> Vec<f64> {
    outcomes.iter().map(|o| o.detection_score()).collect()
}

/// Every session walks its whole cascade so that trajectories are complete;
/// verdicts are then replayed with early exit at `cfg.threshold`.
pub(super) fn run(
    harness: &Harness,
    protocol: &Protocol,
    populations: &Populations,
    cfg: &SessionConfig,
    seed: u64,
) -> Result<PopulationReport, SimError> {
    let walk = SessionConfig {
        early_exit: false,
        ..cfg.clone()
    };
    let population_seed = seed::derive(seed, "population", 0);
    let mut participants = Vec::new();
    for kind in ProfileKind::ALL {
        let records = harness.run_population(protocol, kind, populations.count(kind), &walk, population_seed)?;
        participants.extend(records.iter().map(|r| outcome(kind, r, cfg)));
    }

    let of = |kind: ProfileKind| -> Vec<&ParticipantOutcome> {
        participants.iter().filter(|p| p.pipeline == kind).collect()
    };
    let genuine_scores = scores(&of(ProfileKind::Genuine));

    let mut summaries = Vec::new();
    let mut trajectories = Vec::new();
    let mut all_fake_scores = Vec::new();
    for kind in ProfileKind::ALL {
        let group = of(kind);
        let finals: Vec<f64> = group.iter().map(|o| o.mean_score).collect();
        let (mean_final, std_final) = mean_std(&finals);
        let count = |f: &dyn Fn(&ParticipantOutcome) -> bool| group.iter().filter(|o| f(o)).count();
        let pass = count(&|o| o.verdict == Verdict::Pass);
        let n = group.len();
        let rate = |k: usize| (n > 0).then(|| k as f64 / n as f64);
        let (roc, auc_value) = if kind.is_fake() {
            let s = scores(&group);
            all_fake_scores.extend_from_slice(&s);
            let curve = roc_curve(&genuine_scores, &s);
            let a = auc(&curve);
            (curve, a)
        } else {
            (Vec::new(), None)
        };
        summaries.push(PipelineSummary {
            pipeline: kind,
            sessions: n,
            mean_final,
            std_final,
            se_final: if n > 0 { std_final / (n as f64).sqrt() } else { 0.0 },
            pass,
            fail_threshold_exceeded: count(&|o| o.fail_reason == Some(FailReason::ThresholdExceeded)),
            fail_verification_exhausted: count(&|o| {
                o.fail_reason == Some(FailReason::VerificationExhausted)
            }),
            fpr: if kind.is_fake() { None } else { rate(n - pass) },
            fnr: if kind.is_fake() { rate(pass) } else { None },
            auc: auc_value,
            roc,
        });
        trajectories.push(trajectory(kind, &group));
    }

    Ok(PopulationReport {
        seed,
        score_mode: cfg.score_mode,
        threshold: cfg.threshold,
        cascade_len: cfg.cascade_len,
        populations: *populations,
        summaries,
        trajectories,
        roc: roc_curve(&genuine_scores, &all_fake_scores),
        participants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::Context;
    use crate::catalog::Catalog;
    use crate::simulation::{HarnessConfig, ProfileSet};

    #[test]
    fn single_genuine_participant() {
        let h = Harness::bundled(Context::permissive(0.9));
        let (protocol, _) = h.protocol(1).unwrap();
        let pops = Populations {
            n_genuine: 1,
            n_per_pipeline: 0,
        };
        let r = h.monte_carlo(&protocol, &pops, &SessionConfig::default(), 3).unwrap();
        assert_eq!(r.participants.len(), 1);
        let t = r.trajectory(ProfileKind::Genuine).unwrap();
        assert_eq!(t.points.len(), r.participants[0].trajectory.len());
        assert!(r.trajectory(ProfileKind::Ldfl).unwrap().points.is_empty());
        assert!(r.roc.is_empty());
        assert_eq!(r.summary(ProfileKind::Ldfl).unwrap().fnr, None);
    }

    #[test]
    fn identical_profiles_give_a_diagonal_roc() {
        let genuine = ProfileSet::bundled().genuine().clone();
        let copies = ProfileKind::ALL
            .iter()
            .map(|&k| {
                let mut p = genuine.clone();
                p.name = k;
                p
            })
            .collect();
        let profiles = ProfileSet::new(copies).unwrap();
        let catalog = Catalog::bundled();
        let h = Harness::new(catalog.clone(), profiles, Context::permissive(0.9), HarnessConfig::default()).unwrap();
        let protocol = Protocol {
            suite: catalog.challenges().to_vec(),
            context: Context::permissive(0.9),
            hardness: catalog.ids().map(|id| (id.to_string(), 0.5)).collect(),
            // H1 is fitted on the same distribution as H0 here.
            models: h.fit_models(4).unwrap(),
        };
        let pops = Populations {
            n_genuine: 100,
            n_per_pipeline: 100,
        };
        let r = h.monte_carlo(&protocol, &pops, &SessionConfig::default(), 8).unwrap();
        for kind in ProfileKind::FAKES {
            let a = r.summary(kind).unwrap().auc.unwrap();
            assert!((a - 0.5).abs() <= 0.1, "{kind}: {a}");
        }
    }

    #[test]
    fn csv_headers() {
        let h = Harness::bundled(Context::permissive(0.9));
        let (protocol, _) = h.protocol(1).unwrap();
        let pops = Populations {
            n_genuine: 3,
            n_per_pipeline: 2,
        };
        let r = h.monte_carlo(&protocol, &pops, &SessionConfig::default(), 3).unwrap();
        assert!(r.trajectories_csv().starts_with("pipeline,k,mean_E,std_E\n"));
        assert!(r.roc_csv().starts_with("threshold,fpr,tpr\n"));
        assert_eq!(r.participants.len(), 11);
    }
}
