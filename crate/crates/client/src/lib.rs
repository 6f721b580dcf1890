//! Thin async client for `gotcha-service`.
//!
//! Request and response types are the ones in `gotcha_core::api`, so a
//! client call and the matching in-process call take the same arguments.

use gotcha_core::api::{self, ApiError, ErrorBody};
use gotcha_core::catalog::Catalog;
use gotcha_core::grader::GradeResult;
use gotcha_core::session::{Response, SessionRecord, StepOutcome};
use gotcha_core::simulation::{Calibration, PopulationReport};
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service answered with an error body.
    #[error("{error} (HTTP {status})")]
    Api { status: u16, error: ApiError },
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected response (HTTP {status}): {message}")]
    Decode { status: u16, message: String },
}

impl ClientError {
    /// The service-side error, if the request got that far.
    pub fn api(&self) -> Option<&ApiError> {
        match self {
            ClientError::Api { error, .. } => Some(error),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self::with_http(base, reqwest::Client::new())
    }

    pub fn with_http(base: impl Into<String>, http: reqwest::Client) -> Self {
        let base = base.into().trim_end_matches('/').to_string();
        Self { base, http }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn call<B: Serialize + ?Sized, T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<&B>,
    ) -> Result<T, ClientError> {
        let mut req = self.http.request(method, format!("{}{}", self.base, path));
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await?;
        let status = resp.status();
        let bytes = resp.bytes().await?;
        if status.is_success() {
            let raw: &[u8] = if status == StatusCode::NO_CONTENT { b"null" } else { &bytes };
            return serde_json::from_slice(raw).map_err(|e| ClientError::Decode {
                status: status.as_u16(),
                message: e.to_string(),
            });
        }
        match serde_json::from_slice::<ErrorBody>(&bytes) {
            Ok(body) => Err(ClientError::Api {
                status: status.as_u16(),
                error: body.error,
            }),
            Err(_) => Err(ClientError::Decode {
                status: status.as_u16(),
                message: String::from_utf8_lossy(&bytes).into_owned(),
            }),
        }
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        self.call::<(), T>(Method::GET, path, None).await
    }

    async fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        self.call(Method::POST, path, Some(body)).await
    }

    pub async fn health(&self) -> Result<(), ClientError> {
        self.get::<serde_json::Value>("/health").await.map(|_| ())
    }

    pub async fn version(&self) -> Result<api::VersionInfo, ClientError> {
        self.get("/v1/version").await
    }

    pub async fn catalog(&self) -> Result<Catalog, ClientError> {
        self.get("/v1/catalog").await
    }

    pub async fn validate_catalog(
        &self,
        req: &api::ValidateCatalogRequest,
    ) -> Result<api::ValidateCatalogResponse, ClientError> {
        self.post("/v1/catalog/validate", req).await
    }

    pub async fn benefit_score(&self, req: &api::BenefitScoreRequest) -> Result<api::BenefitScoreResponse, ClientError> {
        self.post("/v1/benefit-score", req).await
    }

    pub async fn qualify(&self, req: &api::QualifyRequest) -> Result<api::QualifyResponse, ClientError> {
        self.post("/v1/qualify", req).await
    }

    pub async fn cascade(&self, req: &api::ProtocolSpec) -> Result<api::CascadeResponse, ClientError> {
        self.post("/v1/cascade", req).await
    }

    pub async fn grade(&self, req: &api::GradeRequest) -> Result<GradeResult, ClientError> {
        self.post("/v1/grade", req).await
    }

    pub async fn simulate(&self, req: &api::SimulateRequest) -> Result<SessionRecord, ClientError> {
        self.post("/v1/simulate", req).await
    }

    pub async fn monte_carlo(&self, req: &api::MonteCarloRequest) -> Result<PopulationReport, ClientError> {
        self.post("/v1/montecarlo", req).await
    }

    pub async fn calibrate(&self, req: &api::CalibrateRequest) -> Result<Calibration, ClientError> {
        self.post("/v1/calibrate", req).await
    }

    pub async fn start_session(&self, req: &api::StartSessionRequest) -> Result<api::SessionView, ClientError> {
        self.post("/v1/sessions", req).await
    }

    pub async fn session(&self, id: &str) -> Result<api::SessionView, ClientError> {
        self.get(&format!("/v1/sessions/{id}")).await
    }

    pub async fn submit(&self, id: &str, response: &Response) -> Result<StepOutcome, ClientError> {
        self.post(&format!("/v1/sessions/{id}/responses"), response).await
    }

    pub async fn session_record(&self, id: &str) -> Result<SessionRecord, ClientError> {
        self.get(&format!("/v1/sessions/{id}/record")).await
    }

    pub async fn delete_session(&self, id: &str) -> Result<(), ClientError> {
        self.call::<(), ()>(Method::DELETE, &format!("/v1/sessions/{id}"), None).await
    }
}
