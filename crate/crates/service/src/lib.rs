//! Stateless HTTP reward scoring for external training loops.
//!
//! `POST /v1/score` takes one [`ScoreRequest`] and returns the serialized
//! reward breakdown, byte-for-byte what the library produces.
//! `POST /v1/score_group` takes a JSON array of exactly `group_size`
//! requests and adds group-relative advantages. `GET /health` is always open;
//! the scoring routes require `Authorization: Bearer <token>` when a token is
//! configured.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use chartaudit_core::reward::{group_advantage, score, RewardConfig, RewardError, RewardInput};
use chartaudit_core::sample::{AnswerOption, OptionLabel, OracleRow};
use chartaudit_core::{Breakdown, PipelineConfig, Taxonomy};
use serde::{Deserialize, Serialize};
use serde_json::json;

/// Optional per-request weight overrides; unset fields keep the configured value.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fact: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contra: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logic: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fmt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub trace_text: String,
    pub ground_truth: OptionLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trap: Option<OptionLabel>,
    pub misleader: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<Vec<OracleRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightOverrides>,
    /// Options for answer extraction; bare labels A–F when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<AnswerOption>>,
}

impl ScoreRequest {
    pub fn to_input(&self) -> RewardInput {
        RewardInput {
            trace_text: self.trace_text.clone(),
            ground_truth: self.ground_truth,
            trap: self.trap,
            misleader: self.misleader.clone(),
            oracle: self.oracle.clone(),
            explanation: self.explanation.clone(),
            options: self.options.clone(),
        }
    }

    /// Reward settings with this request's overrides applied.
    pub fn reward_config(&self, base: &RewardConfig) -> RewardConfig {
        let mut cfg = base.clone();
        if let Some(w) = self.weights {
            let dst = &mut cfg.weights;
            for (slot, v) in [
                (&mut dst.fact, w.fact),
                (&mut dst.contra, w.contra),
                (&mut dst.logic, w.logic),
                (&mut dst.fmt, w.fmt),
            ] {
                if let Some(v) = v {
                    *slot = v;
                }
            }
        }
        cfg
    }
}

/// Group response: one breakdown per request plus advantages over the totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResponse {
    pub breakdowns: Vec<Breakdown>,
    pub advantages: Vec<f64>,
}

/// Read-only state shared by all requests.
#[derive(Debug, Clone)]
pub struct ServiceState {
    pub config: PipelineConfig,
    pub taxonomy: Taxonomy,
    pub token: Option<String>,
}

impl ServiceState {
    pub fn new(config: PipelineConfig, taxonomy: Taxonomy) -> Self {
        ServiceState {
            config,
            taxonomy,
            token: None,
        }
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token.filter(|t| !t.is_empty());
        self
    }
}

/// A request failure with its HTTP status and offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub field: Option<String>,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, field: Option<String>, message: impl Into<String>) -> Self {
        ApiError {
            status,
            field,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": self.message, "field": self.field});
        (self.status, [(header::CONTENT_TYPE, "application/json")], body.to_string()).into_response()
    }
}

fn missing_field(message: &str) -> Option<String> {
    let rest = message.strip_prefix("missing field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.inner().to_string();
        let field = if path == "." {
            missing_field(&message).or_else(|| {
                message
                    .strip_prefix("unknown field `")
                    .and_then(|r| r.find('`').map(|i| r[..i].to_string()))
            })
        } else {
            Some(path)
        };
        ApiError::new(StatusCode::BAD_REQUEST, field, message)
    })
}

fn validate(req: &ScoreRequest, prefix: &str, state: &ServiceState) -> Result<(), ApiError> {
    let field = |name: &str| Some(format!("{prefix}{name}"));
    if req.trap.is_some() && req.trap == Some(req.ground_truth) {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            field("trap"),
            "trap must differ from ground_truth",
        ));
    }
    if let Some(w) = req.weights {
        for (name, v) in [("fact", w.fact), ("contra", w.contra), ("logic", w.logic), ("fmt", w.fmt)] {
            if v.is_some_and(|v| !v.is_finite() || v < 0.0) {
                return Err(ApiError::new(
                    StatusCode::BAD_REQUEST,
                    field(&format!("weights.{name}")),
                    "weights must be finite and >= 0",
                ));
            }
        }
    }
    if let Some(opts) = &req.options {
        let mut seen = std::collections::BTreeSet::new();
        if opts.is_empty() || !opts.iter().all(|o| seen.insert(o.label)) {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                field("options"),
                "options must be non-empty with unique labels",
            ));
        }
    }
    if !state.taxonomy.contains(&req.misleader) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            field("misleader"),
            format!("unknown misleader category {:?}", req.misleader),
        ));
    }
    Ok(())
}

/// Scores one request exactly as the library does.
pub fn score_request(req: &ScoreRequest, state: &ServiceState) -> Result<Breakdown, ApiError> {
    validate(req, "", state)?;
    let cfg = req.reward_config(&state.config.reward);
    score(&req.to_input(), &cfg, &state.config.abstain_phrases, &state.taxonomy).map_err(|e| match e {
        RewardError::Taxonomy(e) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, Some("misleader".into()), e.to_string()),
        other => ApiError::new(StatusCode::BAD_REQUEST, None, other.to_string()),
    })
}

pub fn score_group(reqs: &[ScoreRequest], state: &ServiceState) -> Result<GroupResponse, ApiError> {
    let g = state.config.reward.group_size;
    if reqs.len() != g {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            Some("requests".into()),
            format!("expected a group of {g} requests, got {}", reqs.len()),
        ));
    }
    for (i, r) in reqs.iter().enumerate() {
        validate(r, &format!("[{i}]."), state)?;
    }
    let breakdowns = reqs
        .iter()
        .map(|r| score_request(r, state))
        .collect::<Result<Vec<_>, _>>()?;
    let totals: Vec<f64> = breakdowns.iter().map(|b| b.total).collect();
    let advantages = group_advantage(&totals, g)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, Some("requests".into()), e.to_string()))?;
    Ok(GroupResponse { breakdowns, advantages })
}

fn check_headers(headers: &HeaderMap, state: &ServiceState) -> Result<(), ApiError> {
    if let Some(token) = &state.token {
        let expected = format!("Bearer {token}");
        let got = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
        if got != Some(expected.as_str()) {
            return Err(ApiError::new(StatusCode::UNAUTHORIZED, None, "missing or invalid bearer token"));
        }
    }
    let json_ct = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.split(';').next())
        .is_some_and(|v| v.trim().eq_ignore_ascii_case("application/json"));
    if !json_ct {
        return Err(ApiError::new(
            StatusCode::UNSUPPORTED_MEDIA_TYPE,
            None,
            "content-type must be application/json",
        ));
    }
    Ok(())
}

fn json_response<T: Serialize>(value: &T) -> Response {
    let body = serde_json::to_string(value).expect("serializable");
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn health() -> Response {
    json_response(&json!({"status": "ok"}))
}

async fn score_handler(State(state): State<Arc<ServiceState>>, headers: HeaderMap, body: Bytes) -> Response {
    let result = check_headers(&headers, &state)
        .and_then(|()| parse_json::<ScoreRequest>(&body))
        .and_then(|req| score_request(&req, &state));
    match result {
        Ok(b) => json_response(&b),
        Err(e) => e.into_response(),
    }
}

async fn group_handler(State(state): State<Arc<ServiceState>>, headers: HeaderMap, body: Bytes) -> Response {
    let result = check_headers(&headers, &state)
        .and_then(|()| parse_json::<Vec<ScoreRequest>>(&body))
        .and_then(|reqs| score_group(&reqs, &state));
    match result {
        Ok(g) => json_response(&g),
        Err(e) => e.into_response(),
    }
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/score", post(score_handler))
        .route("/v1/score_group", post(group_handler))
        .with_state(state)
}

/// Serves on an already-bound listener until the task is dropped.
pub async fn serve_listener(listener: tokio::net::TcpListener, state: ServiceState) -> std::io::Result<()> {
    axum::serve(listener, router(Arc::new(state))).await
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, state: ServiceState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
