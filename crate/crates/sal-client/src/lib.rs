//! Thin HTTP client for the SAL control-plane service, plus the wire types
//! the service and its clients share.

pub mod api;

use reqwest::StatusCode;
use thiserror::Error;

use api::{
    ApiErrorBody, BenchRequest, BenchResponse, MediationResponse, ReplayRequest,
    SessionCreateRequest, SessionCreateResponse, SessionStats,
};
use sal_core::chain::{ReplayReport, VerificationReport};
use sal_core::executor::ScopedCredential;
use sal_core::harness::BenchReport;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Http(#[from] reqwest::Error),
    #[error("service error ({status}): {kind}: {message}")]
    Api {
        status: StatusCode,
        kind: String,
        message: String,
    },
    #[error("unexpected response body: {0}")]
    Decode(String),
}

/// Async client for one service base URL.
pub struct SalClient {
    base: String,
    http: reqwest::Client,
}

impl SalClient {
    pub fn new(base_url: &str) -> Self {
        SalClient {
            base: base_url.trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn check(response: reqwest::Response) -> Result<reqwest::Response, ClientError> {
        let status = response.status();
        if status.is_success() {
            return Ok(response);
        }
        let body = response.text().await.unwrap_or_default();
        match serde_json::from_str::<ApiErrorBody>(&body) {
            Ok(e) => Err(ClientError::Api {
                status,
                kind: e.kind,
                message: e.error,
            }),
            Err(_) => Err(ClientError::Api {
                status,
                kind: "unknown".to_string(),
                message: body,
            }),
        }
    }

    async fn get_json<T: serde::de::DeserializeOwned>(
        &self,
        path: &str,
    ) -> Result<T, ClientError> {
        let response = Self::check(self.http.get(self.url(path)).send().await?).await?;
        Ok(response.json().await?)
    }

    async fn get_bytes(&self, path: &str) -> Result<Vec<u8>, ClientError> {
        let response = Self::check(self.http.get(self.url(path)).send().await?).await?;
        Ok(response.bytes().await?.to_vec())
    }

    async fn post_json<B: serde::Serialize, T: serde::de::DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<T, ClientError> {
        let response =
            Self::check(self.http.post(self.url(path)).json(body).send().await?).await?;
        Ok(response.json().await?)
    }

    pub async fn health(&self) -> Result<(), ClientError> {
        Self::check(self.http.get(self.url("/healthz")).send().await?).await?;
        Ok(())
    }

    pub async fn create_session(
        &self,
        request: &SessionCreateRequest,
    ) -> Result<SessionCreateResponse, ClientError> {
        self.post_json("/v1/sessions", request).await
    }

    /// The obfuscated view, as canonical JSON bytes. This is the only state
    /// representation the service will ever hand an agent.
    pub async fn view_bytes(&self, session_id: &str) -> Result<Vec<u8>, ClientError> {
        self.get_bytes(&format!("/v1/sessions/{session_id}/view")).await
    }

    /// Submit raw intent bytes for mediation.
    pub async fn submit_intent(
        &self,
        session_id: &str,
        raw: Vec<u8>,
    ) -> Result<MediationResponse, ClientError> {
        let response = Self::check(
            self.http
                .post(self.url(&format!("/v1/sessions/{session_id}/intents")))
                .header("content-type", "application/json")
                .body(raw)
                .send()
                .await?,
        )
        .await?;
        Ok(response.json().await?)
    }

    pub async fn ledger_bytes(&self, session_id: &str) -> Result<Vec<u8>, ClientError> {
        self.get_bytes(&format!("/v1/sessions/{session_id}/ledger")).await
    }

    pub async fn modes_bytes(&self, session_id: &str) -> Result<Vec<u8>, ClientError> {
        self.get_bytes(&format!("/v1/sessions/{session_id}/modes")).await
    }

    pub async fn report(&self, session_id: &str) -> Result<BenchReport, ClientError> {
        self.get_json(&format!("/v1/sessions/{session_id}/report")).await
    }

    pub async fn stats(&self, session_id: &str) -> Result<SessionStats, ClientError> {
        self.get_json(&format!("/v1/sessions/{session_id}/stats")).await
    }

    pub async fn credentials(
        &self,
        session_id: &str,
    ) -> Result<Vec<ScopedCredential>, ClientError> {
        self.get_json(&format!("/v1/sessions/{session_id}/credentials")).await
    }

    pub async fn verify_session(
        &self,
        session_id: &str,
    ) -> Result<VerificationReport, ClientError> {
        self.post_json(&format!("/v1/sessions/{session_id}/verify"), &())
            .await
    }

    pub async fn replay_session(&self, session_id: &str) -> Result<ReplayReport, ClientError> {
        self.post_json(&format!("/v1/sessions/{session_id}/replay"), &())
            .await
    }

    pub async fn delete_session(&self, session_id: &str) -> Result<(), ClientError> {
        Self::check(
            self.http
                .delete(self.url(&format!("/v1/sessions/{session_id}")))
                .send()
                .await?,
        )
        .await?;
        Ok(())
    }

    /// Run a seeded benchmark server-side; the resulting ledger and sidecar
    /// stay downloadable under the returned session id.
    pub async fn bench(&self, request: &BenchRequest) -> Result<BenchResponse, ClientError> {
        self.post_json("/v1/bench", request).await
    }

    /// Verify an uploaded ledger.
    pub async fn verify_ledger(&self, ledger: Vec<u8>) -> Result<VerificationReport, ClientError> {
        let response = Self::check(
            self.http
                .post(self.url("/v1/verify"))
                .header("content-type", "application/x-ndjson")
                .body(ledger)
                .send()
                .await?,
        )
        .await?;
        Ok(response.json().await?)
    }

    /// Replay an uploaded ledger under an uploaded policy document.
    pub async fn replay_ledger(
        &self,
        request: &ReplayRequest,
    ) -> Result<ReplayReport, ClientError> {
        self.post_json("/v1/replay", request).await
    }
}
