//! Wire types and request handlers shared by the HTTP service and its clients.
//!
//! Every operation is a plain function from a request value to a response
//! value, so the service only adds transport. Errors carry a [`ErrorKind`]
//! that separates bad input from failures while running.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cascade::{build_cascade, Cascade, CascadeError, Context};
use crate::catalog::{benefit_score, default_usability_weights, Catalog, CatalogError};
use crate::grader::{grade, GradeError, GradeResult, ModelPair, DEFAULT_REJECTION_THRESHOLD};
use crate::metrics::{GapConfig, GenuinePass, MetricsError, QualificationReport};
use crate::session::{
    run_session, FailReason, PendingChallenge, Protocol, SessionConfig, SessionError,
    SessionMachine, SessionRecord, StepRecord, Verdict,
};
use crate::simulation::{
    Calibration, Harness, HarnessConfig, PopulationReport, Populations, ProfileError, ProfileKind,
    ProfileSet, SimError,
};
use crate::trace::{ResponseTrace, TraceError};

pub const DEFAULT_CONTEXT: &str = "interview";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// The request itself is invalid.
    Config,
    /// The request was valid but the operation failed.
    Runtime,
    NotFound,
    Conflict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub kind: ErrorKind,
    pub message: String,
}

impl ApiError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Config,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Runtime,
            message: message.into(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::NotFound,
            message: message.into(),
        }
    }
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ApiError {}

/// `{"error": {...}}`, the body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ApiError,
}

impl From<CatalogError> for ApiError {
    fn from(e: CatalogError) -> Self {
        ApiError::config(e.to_string())
    }
}

impl From<ProfileError> for ApiError {
    fn from(e: ProfileError) -> Self {
        ApiError::config(e.to_string())
    }
}

impl From<TraceError> for ApiError {
    fn from(e: TraceError) -> Self {
        ApiError::config(e.to_string())
    }
}

impl From<CascadeError> for ApiError {
    fn from(e: CascadeError) -> Self {
        match e {
            CascadeError::InvalidContext(_) | CascadeError::UnknownPreset(_) | CascadeError::ZeroLength => {
                ApiError::config(e.to_string())
            }
            CascadeError::EmptyEligibleSet | CascadeError::MissingHardness(_) => {
                ApiError::runtime(e.to_string())
            }
        }
    }
}

impl From<MetricsError> for ApiError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::InvalidConfig(_) => ApiError::config(e.to_string()),
            _ => ApiError::runtime(e.to_string()),
        }
    }
}

impl From<GradeError> for ApiError {
    fn from(e: GradeError) -> Self {
        match e {
            GradeError::InsufficientData(_) => ApiError::runtime(e.to_string()),
            _ => ApiError::config(e.to_string()),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::InvalidConfig(_) | SessionError::EmptySuite => ApiError::config(e.to_string()),
            SessionError::Cascade(c) => c.into(),
            SessionError::Trace(t) => t.into(),
            SessionError::ChallengeMismatch { .. } | SessionError::Finished => ApiError {
                kind: ErrorKind::Conflict,
                message: e.to_string(),
            },
            _ => ApiError::runtime(e.to_string()),
        }
    }
}

impl From<SimError> for ApiError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Profile(p) => p.into(),
            SimError::Session(s) => s.into(),
            SimError::Metrics(m) => m.into(),
            SimError::Grade(g) => g.into(),
            SimError::InvalidCapture(_) | SimError::InvalidConfig(_) => ApiError::config(e.to_string()),
            SimError::Trace(_) => ApiError::runtime(e.to_string()),
        }
    }
}

/// A context preset name or an inline context document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContextSpec {
    Preset(String),
    Inline(Context),
}

/// Catalog, profiles, context and harness settings. Anything left out falls
/// back to the bundled data, the `interview` context and default settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<Value>,
    /// Exactly one document per pipeline, in any order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiles: Option<Vec<Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<ContextSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harness: Option<HarnessConfig>,
}

impl Inputs {
    pub fn catalog(&self) -> Result<Catalog, ApiError> {
        match &self.catalog {
            Some(v) => Ok(Catalog::from_json(&v.to_string())?),
            None => Ok(Catalog::bundled()),
        }
    }

    pub fn context(&self) -> Result<Context, ApiError> {
        match &self.context {
            None => Ok(Context::preset(DEFAULT_CONTEXT)?),
            Some(ContextSpec::Preset(name)) => Ok(Context::preset(name)?),
            Some(ContextSpec::Inline(ctx)) => {
                ctx.validate()?;
                Ok(ctx.clone())
            }
        }
    }

    /// Builds the harness, checking profile coverage and orderings.
    pub fn harness(&self) -> Result<Harness, ApiError> {
        let catalog = self.catalog()?;
        let profiles = match &self.profiles {
            Some(docs) => {
                let texts: Vec<(String, String)> = docs
                    .iter()
                    .enumerate()
                    .map(|(i, d)| (format!("profiles[{i}]"), d.to_string()))
                    .collect();
                ProfileSet::from_documents(texts.iter().map(|(n, t)| (n.as_str(), t.as_str())))?
            }
            None => ProfileSet::bundled(),
        };
        profiles.validate(&catalog)?;
        Ok(Harness::new(
            catalog,
            profiles,
            self.context()?,
            self.harness.unwrap_or_default(),
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionInfo {
    pub name: String,
    pub version: String,
}

pub fn version() -> VersionInfo {
    VersionInfo {
        name: "gotcha".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateCatalogRequest {
    pub catalog: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateCatalogResponse {
    pub challenges: usize,
    pub ids: Vec<String>,
}

pub fn validate_catalog(req: &ValidateCatalogRequest) -> Result<ValidateCatalogResponse, ApiError> {
    let catalog = Catalog::from_json(&req.catalog.to_string())?;
    Ok(ValidateCatalogResponse {
        challenges: catalog.len(),
        ids: catalog.ids().map(str::to_string).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenefitScoreRequest {
    #[serde(default)]
    pub inputs: Inputs,
    pub challenge_id: String,
    /// Defaults to unit weight on every usability benefit.
    #[serde(default)]
    pub weights: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenefitScoreResponse {
    pub challenge_id: String,
    pub score: f64,
}

pub fn benefit(req: &BenefitScoreRequest) -> Result<BenefitScoreResponse, ApiError> {
    let catalog = req.inputs.catalog()?;
    let challenge = catalog
        .get(&req.challenge_id)
        .ok_or_else(|| ApiError::not_found(format!("no challenge `{}`", req.challenge_id)))?;
    let weights = req.weights.clone().unwrap_or_else(default_usability_weights);
    Ok(BenefitScoreResponse {
        challenge_id: challenge.id.clone(),
        score: benefit_score(challenge, &weights)?,
    })
}

fn default_reference() -> ProfileKind {
    ProfileKind::Ldfl
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualifyRequest {
    #[serde(default)]
    pub inputs: Inputs,
    #[serde(default = "default_reference")]
    pub pipeline: ProfileKind,
    #[serde(default)]
    pub gap: GapConfig,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualifyResponse {
    pub pipeline: ProfileKind,
    pub report: QualificationReport,
    pub genuine_pass: GenuinePass,
}

pub fn qualify(req: &QualifyRequest) -> Result<QualifyResponse, ApiError> {
    req.gap.validate()?;
    if !req.pipeline.is_fake() {
        return Err(ApiError::config("qualification needs a manipulated pipeline, not Genuine"));
    }
    let h = req.inputs.harness()?;
    Ok(QualifyResponse {
        pipeline: req.pipeline,
        report: h.qualify(req.pipeline, &req.gap, req.seed)?,
        genuine_pass: h.genuine_pass(&req.gap, req.seed)?,
    })
}

/// Fields shared by every request that runs the protocol.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    #[serde(default)]
    pub inputs: Inputs,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub session: SessionConfig,
    /// Replaces the models fitted from `seed`, e.g. with a calibration's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub models: Option<ModelPair>,
}

impl ProtocolSpec {
    fn build(&self) -> Result<(Harness, Protocol), ApiError> {
        self.session.validate()?;
        if let Some(m) = &self.models {
            m.validate()?;
        }
        let h = self.inputs.harness()?;
        let (mut protocol, _) = h.protocol(self.seed)?;
        if let Some(m) = self.models {
            protocol.models = m;
        }
        Ok((h, protocol))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeResponse {
    pub cascade: Cascade,
    pub suite: Vec<String>,
    pub hardness: BTreeMap<String, f64>,
}

pub fn cascade(req: &ProtocolSpec) -> Result<CascadeResponse, ApiError> {
    let (_, p) = req.build()?;
    let cascade = build_cascade(
        &p.suite,
        &p.context,
        &p.hardness,
        req.session.cascade_len,
        req.session.sampling,
        req.session.rng_seed,
    )?;
    Ok(CascadeResponse {
        cascade,
        suite: p.suite.iter().map(|c| c.id.clone()).collect(),
        hardness: p.hardness,
    })
}

fn default_s() -> f64 {
    DEFAULT_REJECTION_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradeRequest {
    pub trace: ResponseTrace,
    pub models: ModelPair,
    #[serde(default = "default_s")]
    pub s: f64,
}

pub fn grade_trace(req: &GradeRequest) -> Result<GradeResult, ApiError> {
    req.trace.validate()?;
    req.models.validate()?;
    Ok(grade(&req.trace, &req.models.h0, &req.models.h1, req.s)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateRequest {
    #[serde(flatten)]
    pub protocol: ProtocolSpec,
    pub pipeline: ProfileKind,
    /// Index of the participant within the pipeline's population.
    #[serde(default)]
    pub participant: u64,
}

/// One simulated session. The participant is drawn from the population
/// seeded by `seed`.
pub fn simulate_session(req: &SimulateRequest) -> Result<SessionRecord, ApiError> {
    let (h, protocol) = req.protocol.build()?;
    let mut p = h.participant(req.pipeline, req.participant, req.protocol.seed);
    Ok(run_session(&mut p, &protocol, &req.protocol.session)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloRequest {
    #[serde(flatten)]
    pub protocol: ProtocolSpec,
    #[serde(default)]
    pub populations: Populations,
}

pub fn monte_carlo(req: &MonteCarloRequest) -> Result<PopulationReport, ApiError> {
    if req.populations.n_genuine == 0 && req.populations.n_per_pipeline == 0 {
        return Err(ApiError::config("at least one population must be non-empty"));
    }
    let (h, protocol) = req.protocol.build()?;
    Ok(h.monte_carlo(&protocol, &req.populations, &req.protocol.session, req.protocol.seed)?)
}

fn default_calibration_size() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrateRequest {
    #[serde(flatten)]
    pub protocol: ProtocolSpec,
    #[serde(default = "default_calibration_size")]
    pub n_genuine: usize,
    pub fp_rate: f64,
}

pub fn calibrate(req: &CalibrateRequest) -> Result<Calibration, ApiError> {
    if !(req.fp_rate > 0.0 && req.fp_rate < 1.0) {
        return Err(ApiError::config(format!(
            "fp_rate must be in (0, 1), got {}",
            req.fp_rate
        )));
    }
    let (h, protocol) = req.protocol.build()?;
    Ok(h.calibrate(&protocol, req.n_genuine, req.fp_rate, &req.protocol.session, req.protocol.seed)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSessionRequest {
    #[serde(flatten)]
    pub protocol: ProtocolSpec,
    pub participant_id: String,
}

/// State of a live session as seen by the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub participant_id: String,
    pub cascade: Cascade,
    pub pending: Option<PendingChallenge>,
    pub steps: Vec<StepRecord>,
    pub finished: bool,
    pub verdict: Option<Verdict>,
    pub fail_reason: Option<FailReason>,
}

impl SessionView {
    pub fn of(session_id: &str, machine: &SessionMachine) -> Self {
        let record = machine.record();
        let finished = machine.is_finished();
        Self {
            session_id: session_id.to_string(),
            participant_id: record.participant_id,
            cascade: record.cascade,
            pending: machine.pending(),
            steps: record.steps,
            finished,
            verdict: finished.then_some(record.verdict),
            fail_reason: record.fail_reason,
        }
    }
}

pub fn start_session(req: &StartSessionRequest) -> Result<SessionMachine, ApiError> {
    let (_, protocol) = req.protocol.build()?;
    Ok(SessionMachine::start(req.participant_id.clone(), &protocol, &req.protocol.session)?)
}
