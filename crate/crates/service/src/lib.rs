//! HTTP front end for the repair engine.
//!
//! Every completion request runs one repair session on a blocking worker with
//! freshly built backends, appends the session to the run log, and only then
//! answers. The run log is the only state shared between requests.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use codexity_core::analyzers::{resolve_tool, AnalyzeError, AnalyzerConfig};
use codexity_core::config::{CodexityConfig, DEFAULT_BIND};
use codexity_core::diagnostics::{AnalyzerFailure, AnalyzerKind, Diagnostic};
use codexity_core::llm::{probe_reachable, BackendConfig, BackendKind, OutputClass};
use codexity_core::prompting::PromptError;
use codexity_core::repair::{
    run_configured_session, IterationRole, Outcome, RepairError, RepairSession, Strategy, StrategyConfig,
};
use codexity_core::runlog::RunLog;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

const PROBE_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct ServiceConfig {
    pub bind_address: String,
    pub strategy_defaults: StrategyConfig,
    pub analyzer_defaults: AnalyzerConfig,
    pub run_log_path: PathBuf,
    /// Named backends a request may select instead of the default target.
    pub backends: BTreeMap<String, BackendConfig>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        CodexityConfig::default().into()
    }
}

impl From<CodexityConfig> for ServiceConfig {
    fn from(c: CodexityConfig) -> Self {
        Self {
            bind_address: c.bind_address,
            strategy_defaults: c.strategy,
            analyzer_defaults: c.analyzer,
            run_log_path: c.run_log_path,
            backends: c.backends,
        }
    }
}

pub struct AppState {
    pub config: ServiceConfig,
    pub log: RunLog,
}

impl AppState {
    pub fn open(config: ServiceConfig) -> std::io::Result<Arc<Self>> {
        let log = RunLog::open(&config.run_log_path)?;
        Ok(Arc::new(Self { config, log }))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CompleteRequest {
    pub code: String,
    pub strategy: String,
    /// Partial `StrategyConfig`, merged over the service defaults.
    #[serde(default)]
    pub overrides: Option<Value>,
    /// Name of a configured backend to use as the target model.
    #[serde(default)]
    pub backend: Option<String>,
    #[serde(default)]
    pub timeout_seconds: Option<f64>,
    /// Embed the full persisted session, transcripts included.
    #[serde(default)]
    pub include_session: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IterationSummary {
    pub index: usize,
    pub role: IterationRole,
    pub output_class: OutputClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    pub diagnostics: Vec<Diagnostic>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub analyzer_failures: Vec<AnalyzerFailure>,
    pub latency_seconds: f64,
    pub analysis_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CompleteResponse {
    pub session_id: String,
    pub strategy: Strategy,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_code: Option<String>,
    pub iterations: Vec<IterationSummary>,
    pub total_seconds: f64,
    pub repair_iteration_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<RepairSession>,
}

impl CompleteResponse {
    pub fn from_session(session: &RepairSession) -> Self {
        Self {
            session_id: session.session_id.clone(),
            strategy: session.strategy,
            outcome: session.outcome,
            final_code: session.final_code.clone(),
            iterations: session
                .iterations
                .iter()
                .map(|it| IterationSummary {
                    index: it.index,
                    role: it.role,
                    output_class: it.output_class,
                    code: it.result.extracted_code.clone(),
                    diagnostics: it.report.as_ref().map(|r| r.diagnostics.clone()).unwrap_or_default(),
                    analyzer_failures: it.report.as_ref().map(|r| r.analyzer_failures.clone()).unwrap_or_default(),
                    latency_seconds: it.result.latency_seconds,
                    analysis_seconds: it.analysis_seconds,
                })
                .collect(),
            total_seconds: session.total_seconds,
            repair_iteration_count: session.repair_iteration_count,
            warnings: session.warnings.clone(),
            session: None,
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "badRequest", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"kind": self.kind, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

impl From<RepairError> for ApiError {
    fn from(e: RepairError) -> Self {
        let message = e.to_string();
        match e {
            RepairError::Config(_) | RepairError::Prompt(PromptError::EmptyInput | PromptError::Template(_)) => {
                Self::bad_request(message)
            }
            RepairError::Prompt(PromptError::NotVulnerable) => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
            }
            RepairError::Backend { .. } => Self::new(StatusCode::BAD_GATEWAY, "backendFailure", message),
            RepairError::Analysis { source: AnalyzeError::InvalidConfig(_), .. } => Self::bad_request(message),
            RepairError::Analysis { .. } => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "allAnalyzersFailed", message)
            }
            RepairError::RunLog(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "runLog", message),
        }
    }
}

// Objects merge key by key; anything else is replaced.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(base), Value::Object(patch)) => {
            for (k, v) in patch {
                merge(base.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, patch) => *slot = patch,
    }
}

/// The session configuration for one request.
pub fn resolve_strategy(config: &ServiceConfig, req: &CompleteRequest) -> Result<StrategyConfig, ApiError> {
    let strategy: Strategy = req.strategy.parse().map_err(ApiError::bad_request)?;
    let mut cfg = config.strategy_defaults.clone();
    if let Some(name) = &req.backend {
        cfg.target_backend = config
            .backends
            .get(name)
            .cloned()
            .ok_or_else(|| ApiError::bad_request(format!("unknown backend `{name}`")))?;
    }
    if let Some(overrides) = req.overrides.clone() {
        if !overrides.is_object() {
            return Err(ApiError::bad_request("overrides must be an object"));
        }
        let mut value = serde_json::to_value(&cfg).map_err(|e| ApiError::bad_request(e.to_string()))?;
        merge(&mut value, overrides);
        cfg = serde_json::from_value(value).map_err(|e| ApiError::bad_request(format!("invalid overrides: {e}")))?;
    }
    cfg.strategy = strategy;
    cfg.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(cfg)
}

async fn complete(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CompleteRequest>, JsonRejection>,
) -> Result<Json<CompleteResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    if req.code.trim().is_empty() {
        return Err(ApiError::bad_request("code must not be empty"));
    }
    let cfg = resolve_strategy(&state.config, &req)?;
    let timeout = match req.timeout_seconds {
        Some(t) if t > 0.0 && t.is_finite() => Some(Duration::from_secs_f64(t)),
        Some(t) => return Err(ApiError::bad_request(format!("timeoutSeconds must be positive, got {t}"))),
        None => None,
    };

    let worker_state = state.clone();
    let code = req.code.clone();
    // The session is appended inside the worker, so a 200 always has its line.
    let task = tokio::task::spawn_blocking(move || {
        run_configured_session(&code, &cfg, &worker_state.config.analyzer_defaults, Some(&worker_state.log))
    });
    let joined = match timeout {
        Some(limit) => tokio::time::timeout(limit, task).await.map_err(|_| {
            ApiError::new(
                StatusCode::GATEWAY_TIMEOUT,
                "timeout",
                format!("session did not finish within {}s", limit.as_secs_f64()),
            )
        })?,
        None => task.await,
    };
    let session = joined.map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;

    let mut response = CompleteResponse::from_session(&session);
    if req.include_session {
        response.session = Some(session);
    }
    Ok(Json(response))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<RepairSession>, ApiError> {
    let lookup = tokio::task::spawn_blocking(move || state.log.get(&id).map(|s| (id, s)))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    match lookup {
        Ok((_, Some(session))) => Ok(Json(session)),
        Ok((id, None)) => Err(ApiError::new(StatusCode::NOT_FOUND, "notFound", format!("no session `{id}`"))),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "runLog", e.to_string())),
    }
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({"sessionIds": state.log.ids()}))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerHealth {
    pub cppcheck: bool,
    pub infer: bool,
    pub builtin: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendHealth {
    pub kind: BackendKind,
    pub reachable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub analyzers: AnalyzerHealth,
    pub backend: BackendHealth,
}

/// Tool resolvability and target-backend reachability. Nothing is executed.
pub fn health(config: &ServiceConfig) -> Health {
    let analyzer = &config.analyzer_defaults;
    let target = &config.strategy_defaults.target_backend.descriptor;
    Health {
        status: "ok".into(),
        analyzers: AnalyzerHealth {
            cppcheck: resolve_tool(AnalyzerKind::CppCheck, analyzer).is_ok(),
            infer: resolve_tool(AnalyzerKind::Infer, analyzer).is_ok(),
            builtin: true,
        },
        backend: BackendHealth {
            kind: target.kind,
            reachable: probe_reachable(target, PROBE_TIMEOUT),
        },
    }
}

async fn get_health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let report = tokio::task::spawn_blocking(move || health(&state.config)).await;
    Json(report.unwrap_or_else(|_| Health {
        status: "ok".into(),
        analyzers: AnalyzerHealth {
            cppcheck: false,
            infer: false,
            builtin: true,
        },
        backend: BackendHealth {
            kind: BackendKind::ScriptedMock,
            reachable: false,
        },
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/complete", post(complete))
        .route("/v1/sessions", get(list_sessions))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/health", get(get_health))
        .with_state(state)
}

/// Binds `config.bind_address` (default loopback) and returns the listener
/// with the router, without serving yet.
pub async fn bind(config: ServiceConfig) -> std::io::Result<(tokio::net::TcpListener, Router)> {
    let address = if config.bind_address.is_empty() {
        DEFAULT_BIND.to_string()
    } else {
        config.bind_address.clone()
    };
    let listener = tokio::net::TcpListener::bind(&address).await?;
    if let Ok(addr) = listener.local_addr() {
        if !addr.ip().is_loopback() {
            tracing::warn!(%addr, "listening on a non-loopback address; the service has no authentication");
        }
    }
    let state = AppState::open(config)?;
    Ok((listener, router(state)))
}

/// Serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let (listener, app) = bind(config).await?;
    serve_on(listener, app).await
}

/// Serves an already bound listener until Ctrl-C.
pub async fn serve_on(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    let addr: SocketAddr = listener.local_addr()?;
    tracing::info!(%addr, "codexity service listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
