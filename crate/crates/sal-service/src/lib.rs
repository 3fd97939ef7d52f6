//! HTTP control plane: sessions of mediated execution over HTTP/JSON.
//!
//! Each session owns one simulated infrastructure, one membrane projection,
//! one policy set, and one evidence ledger. Agents interact through exactly
//! two surfaces: `GET .../view` (the obfuscated state) and
//! `POST .../intents` (raw intent bytes in, verdict attribution out).
//! Operator surfaces expose the ledger, verification, replay, credential
//! audit, and server-side benchmarks.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use uuid::Uuid;

use sal_client::api::{
    ApiErrorBody, BenchRequest, BenchResponse, MediationResponse, ReplayRequest,
    SessionCreateRequest, SessionCreateResponse, SessionStats,
};
use sal_core::chain::{replay_ledger_bytes, verify_ledger_bytes, ExecutedField};
use sal_core::control::ControlPlane;
use sal_core::evaluator::{Decision, PolicySet};
use sal_core::harness::{modes_to_jsonl, run_loop, AgentMode, BenchReport};
use sal_core::membrane::IdentityScanner;
use sal_core::state::generate_state;

/// One mounted session: either a live mediation plane or the sealed result
/// of a server-side benchmark.
enum SessionKind {
    Live {
        plane: Box<ControlPlane>,
        scanner: IdentityScanner,
    },
    Bench {
        ledger_bytes: Vec<u8>,
        modes: Vec<AgentMode>,
        policies: PolicySet,
        report: Box<BenchReport>,
    },
}

struct Session {
    kind: SessionKind,
}

#[derive(Default)]
pub struct AppState {
    sessions: Mutex<HashMap<Uuid, Arc<tokio::sync::Mutex<Session>>>>,
}

pub fn router() -> Router {
    Router::new()
        .route("/healthz", get(health))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", delete(drop_session))
        .route("/v1/sessions/{id}/view", get(session_view))
        .route("/v1/sessions/{id}/intents", post(submit_intent))
        .route("/v1/sessions/{id}/ledger", get(session_ledger))
        .route("/v1/sessions/{id}/modes", get(session_modes))
        .route("/v1/sessions/{id}/report", get(session_report))
        .route("/v1/sessions/{id}/stats", get(session_stats))
        .route("/v1/sessions/{id}/credentials", get(session_credentials))
        .route("/v1/sessions/{id}/verify", post(session_verify))
        .route("/v1/sessions/{id}/replay", post(session_replay))
        .route("/v1/bench", post(run_bench))
        .route("/v1/verify", post(verify_uploaded))
        .route("/v1/replay", post(replay_uploaded))
        .with_state(Arc::new(AppState::default()))
}

/// Serve until the listener fails or the process is stopped.
pub async fn serve(listener: tokio::net::TcpListener) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "control plane listening");
    axum::serve(listener, router()).await
}

struct ApiFailure {
    kind: &'static str,
    message: String,
    status: StatusCode,
}

impl ApiFailure {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        ApiFailure {
            kind,
            message: message.into(),
            status,
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "wrong_session_kind", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiFailure {
    fn into_response(self) -> Response {
        let body = ApiErrorBody {
            error: self.message,
            kind: self.kind.to_string(),
        };
        (self.status, Json(body)).into_response()
    }
}

type Handle = Arc<tokio::sync::Mutex<Session>>;

fn lookup(state: &AppState, id: &str) -> Result<Handle, ApiFailure> {
    let uuid = Uuid::parse_str(id)
        .map_err(|_| ApiFailure::bad_request(format!("invalid session id {id}")))?;
    state
        .sessions
        .lock()
        .expect("session map lock")
        .get(&uuid)
        .cloned()
        .ok_or_else(|| ApiFailure::not_found(format!("no session {id}")))
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok"}))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(request): Json<SessionCreateRequest>,
) -> Result<Json<SessionCreateResponse>, ApiFailure> {
    let policies = PolicySet::from_document_value(&request.policy)
        .map_err(|e| ApiFailure::bad_request(format!("policy rejected: {e}")))?;
    let infra = generate_state(request.seed, request.node_count, request.edge_density_ppm)
        .map_err(|e| ApiFailure::bad_request(format!("state generation rejected: {e}")))?;
    let scanner = IdentityScanner::new(&infra);
    let policy_hash = policies.policy_hash.clone();
    let node_count = infra.nodes.len() as u64;
    let plane = ControlPlane::new(infra, policies, request.seed);
    let epoch = plane.state().epoch;

    let id = Uuid::new_v4();
    state.sessions.lock().expect("session map lock").insert(
        id,
        Arc::new(tokio::sync::Mutex::new(Session {
            kind: SessionKind::Live {
                plane: Box::new(plane),
                scanner,
            },
        })),
    );
    Ok(Json(SessionCreateResponse {
        epoch,
        node_count,
        policy_hash,
        session_id: id.to_string(),
    }))
}

async fn drop_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<StatusCode, ApiFailure> {
    let uuid =
        Uuid::parse_str(&id).map_err(|_| ApiFailure::bad_request("invalid session id"))?;
    match state.sessions.lock().expect("session map lock").remove(&uuid) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiFailure::not_found(format!("no session {id}"))),
    }
}

async fn session_view(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Response, ApiFailure> {
    let handle = lookup(&state, &id)?;
    let session = handle.lock().await;
    match &session.kind {
        SessionKind::Live { plane, scanner } => {
            let bytes = plane.view().to_canonical_bytes();
            // Runtime guard on the isolation invariant: a view that carries
            // any identity substring never leaves the process.
            if scanner.leak_count(&bytes) > 0 {
                return Err(ApiFailure::internal("identity leak detected in view"));
            }
            Ok((
                [(header::CONTENT_TYPE, "application/json")],
                bytes,
            )
                .into_response())
        }
        SessionKind::Bench { .. } => {
            Err(ApiFailure::conflict("bench sessions have no live view"))
        }
    }
}

async fn submit_intent(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    raw: Bytes,
) -> Result<Json<MediationResponse>, ApiFailure> {
    let handle = lookup(&state, &id)?;
    let mut session = handle.lock().await;
    match &mut session.kind {
        SessionKind::Live { plane, .. } => {
            let (record, _) = plane
                .mediate(&raw)
                .map_err(|e| ApiFailure::internal(format!("mediation fault: {e}")))?;
            Ok(Json(MediationResponse {
                decision: record.verdict.decision,
                failed_claims: record.verdict.failed_claims.clone(),
                matched_rule_ids: record.verdict.matched_rule_ids.clone(),
                policy_hash: record.verdict.policy_hash.clone(),
                record_hash: record.record_hash.clone(),
                step_index: record.step_index,
            }))
        }
        SessionKind::Bench { .. } => {
            Err(ApiFailure::conflict("bench sessions do not accept intents"))
        }
    }
}

async fn session_ledger(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Response, ApiFailure> {
    let handle = lookup(&state, &id)?;
    let session = handle.lock().await;
    let bytes = match &session.kind {
        SessionKind::Live { plane, .. } => plane.ledger().to_jsonl_bytes(),
        SessionKind::Bench { ledger_bytes, .. } => ledger_bytes.clone(),
    };
    Ok((
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        bytes,
    )
        .into_response())
}

async fn session_modes(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Response, ApiFailure> {
    let handle = lookup(&state, &id)?;
    let session = handle.lock().await;
    match &session.kind {
        SessionKind::Bench { modes, .. } => Ok((
            [(header::CONTENT_TYPE, "application/x-ndjson")],
            modes_to_jsonl(modes),
        )
            .into_response()),
        SessionKind::Live { .. } => Err(ApiFailure::conflict(
            "live sessions have no workload sidecar",
        )),
    }
}

async fn session_report(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Response, ApiFailure> {
    let handle = lookup(&state, &id)?;
    let session = handle.lock().await;
    match &session.kind {
        SessionKind::Bench { report, .. } => Ok((
            [(header::CONTENT_TYPE, "application/json")],
            report.to_canonical_bytes(),
        )
            .into_response()),
        SessionKind::Live { .. } => Err(ApiFailure::conflict(
            "live sessions have stats, not a benchmark report",
        )),
    }
}

fn stats_from_ledger(records: &[sal_core::chain::ChainRecord]) -> SessionStats {
    let mut stats = SessionStats::default();
    for record in records {
        stats.total_records += 1;
        match record.verdict.decision {
            Decision::Approved => stats.approved += 1,
            Decision::DeniedPolicy => stats.denied_policy += 1,
            Decision::DeniedConsistency => stats.denied_consistency += 1,
            Decision::DeniedError => stats.denied_error += 1,
        }
        if matches!(record.executed_action, ExecutedField::Executed(_)) {
            stats.executed += 1;
        }
    }
    stats
}

async fn session_stats(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionStats>, ApiFailure> {
    let handle = lookup(&state, &id)?;
    let session = handle.lock().await;
    let stats = match &session.kind {
        SessionKind::Live { plane, .. } => stats_from_ledger(plane.ledger().records()),
        SessionKind::Bench { report, .. } => SessionStats {
            approved: report.approved,
            denied_consistency: report.blocked_consistency,
            denied_error: 0,
            denied_policy: report.blocked_policy,
            executed: report.executed,
            total_records: report.total_intents,
        },
    };
    Ok(Json(stats))
}

async fn session_credentials(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<Vec<sal_core::executor::ScopedCredential>>, ApiFailure> {
    let handle = lookup(&state, &id)?;
    let session = handle.lock().await;
    match &session.kind {
        SessionKind::Live { plane, .. } => Ok(Json(plane.audit_credentials().to_vec())),
        SessionKind::Bench { .. } => Err(ApiFailure::conflict(
            "bench credential audits live in the report",
        )),
    }
}

async fn session_verify(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<sal_core::chain::VerificationReport>, ApiFailure> {
    let handle = lookup(&state, &id)?;
    let session = handle.lock().await;
    let bytes = match &session.kind {
        SessionKind::Live { plane, .. } => plane.ledger().to_jsonl_bytes(),
        SessionKind::Bench { ledger_bytes, .. } => ledger_bytes.clone(),
    };
    Ok(Json(verify_ledger_bytes(&bytes)))
}

async fn session_replay(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<sal_core::chain::ReplayReport>, ApiFailure> {
    let handle = lookup(&state, &id)?;
    let session = handle.lock().await;
    let (bytes, policies) = match &session.kind {
        SessionKind::Live { plane, .. } => {
            (plane.ledger().to_jsonl_bytes(), plane.policies().clone())
        }
        SessionKind::Bench {
            ledger_bytes,
            policies,
            ..
        } => (ledger_bytes.clone(), policies.clone()),
    };
    let report = replay_ledger_bytes(&bytes, &policies)
        .map_err(|e| ApiFailure::bad_request(format!("replay refused: {e}")))?;
    Ok(Json(report))
}

async fn run_bench(
    State(state): State<Arc<AppState>>,
    Json(request): Json<BenchRequest>,
) -> Result<Json<BenchResponse>, ApiFailure> {
    let policies = PolicySet::from_document_value(&request.policy)
        .map_err(|e| ApiFailure::bad_request(format!("policy rejected: {e}")))?;
    let spec = request.spec;
    let stored_policies = policies.clone();
    let outcome = tokio::task::spawn_blocking(move || run_loop(&spec, &policies))
        .await
        .map_err(|e| ApiFailure::internal(format!("bench task failed: {e}")))?
        .map_err(|e| ApiFailure::bad_request(format!("bench rejected: {e}")))?;

    if outcome.scrub_leak_total > 0 {
        return Err(ApiFailure::internal("identity leak detected during bench"));
    }

    let report = outcome.report.clone();
    let id = Uuid::new_v4();
    state.sessions.lock().expect("session map lock").insert(
        id,
        Arc::new(tokio::sync::Mutex::new(Session {
            kind: SessionKind::Bench {
                ledger_bytes: outcome.ledger.to_jsonl_bytes(),
                modes: outcome.modes,
                policies: stored_policies,
                report: Box::new(outcome.report),
            },
        })),
    );
    Ok(Json(BenchResponse {
        report,
        session_id: id.to_string(),
    }))
}

async fn verify_uploaded(
    raw: Bytes,
) -> Result<Json<sal_core::chain::VerificationReport>, ApiFailure> {
    Ok(Json(verify_ledger_bytes(&raw)))
}

async fn replay_uploaded(
    Json(request): Json<ReplayRequest>,
) -> Result<Json<sal_core::chain::ReplayReport>, ApiFailure> {
    let policies = PolicySet::from_document_value(&request.policy)
        .map_err(|e| ApiFailure::bad_request(format!("policy rejected: {e}")))?;
    let report = replay_ledger_bytes(request.ledger.as_bytes(), &policies)
        .map_err(|e| ApiFailure::bad_request(format!("replay refused: {e}")))?;
    Ok(Json(report))
}
