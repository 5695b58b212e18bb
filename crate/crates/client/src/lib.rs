//! Thin typed client for the entroprune HTTP service.

use entroprune_api as api;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(#[from] reqwest::Error),
    /// The service answered with a structured error.
    #[error("service error ({status} {kind}): {message}")]
    Api {
        status: u16,
        kind: String,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is e.g. `http://127.0.0.1:8321` (no trailing slash needed).
    pub fn new(base: impl Into<String>) -> Client {
        Client {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        req: &Req,
    ) -> Result<Resp> {
        let response = self
            .http
            .post(format!("{}{}", self.base, path))
            .json(req)
            .send()
            .await?;
        let status = response.status();
        if status.is_success() {
            Ok(response.json().await?)
        } else {
            let err: api::ApiError = response.json().await.unwrap_or(api::ApiError {
                kind: "unknown".into(),
                error: format!("service returned {status}"),
            });
            Err(ClientError::Api {
                status: status.as_u16(),
                kind: err.kind,
                message: err.error,
            })
        }
    }

    pub async fn health(&self) -> Result<api::HealthResponse> {
        let response = self.http.get(format!("{}/healthz", self.base)).send().await?;
        Ok(response.error_for_status()?.json().await?)
    }

    pub async fn classify(&self, req: &api::ClassifyRequest) -> Result<api::ClassifyResponse> {
        self.post("/v1/classify", req).await
    }

    pub async fn entropy_map(
        &self,
        req: &api::EntropyMapRequest,
    ) -> Result<api::EntropyMapResponse> {
        self.post("/v1/entropy-map", req).await
    }

    pub async fn sweep(&self, req: &api::SweepRequest) -> Result<api::SweepResponse> {
        self.post("/v1/sweep", req).await
    }

    pub async fn flops(&self, req: &api::FlopsRequest) -> Result<api::FlopsResponse> {
        self.post("/v1/flops", req).await
    }

    pub async fn benchmark(&self, req: &api::BenchmarkRequest) -> Result<api::BenchmarkResponse> {
        self.post("/v1/benchmark", req).await
    }
}
