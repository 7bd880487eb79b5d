//! JSON-over-HTTP translation service.
//!
//! Routes:
//!
//! - `POST /translate` with a [`TranslateRequest`] body returns a [`TranslateResponse`].
//! - `GET /health` returns `{status, model_id}`, or 503 when no model is loaded.
//! - `GET /model/info` returns the model config, vocabulary sizes and the checkpoint checksum.
//!
//! The model is loaded once and shared read-only between requests.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};

use fsmt_core::annotator::PhraseMatcher;
use fsmt_core::corpus::{read_lexicon, CorpusError};
use fsmt_core::lexicon::FormalityLexicon;
use fsmt_core::model::{
    decode, read_checkpoint, stored_checksum, Checkpoint, CheckpointError, DecodeConfig, ModelConfig,
};
use fsmt_core::textnorm::{normalize, tokenize, NormalizationConfig};
use fsmt_core::FormalityLabel;

pub const MAX_TEXT_BYTES: usize = 2000;
pub const MAX_BEAMS: usize = 16;
const MAX_BODY_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Origins allowed to call the API from a browser.
    pub cors_origins: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            cors_origins: vec!["http://localhost:5173".into()],
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot read checkpoint {path}: {source}")]
    ReadCheckpoint { path: String, source: std::io::Error },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("lexicon: {0}")]
    Lexicon(#[from] CorpusError),
    #[error("invalid CORS origin {0:?}")]
    InvalidOrigin(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A checkpoint plus the lexicon used to mark spans in translations.
pub struct LoadedModel {
    pub checkpoint: Checkpoint,
    pub checksum: u32,
    matcher: Option<PhraseMatcher>,
}

impl LoadedModel {
    pub fn from_bytes(bytes: &[u8], lexicon: Option<&FormalityLexicon>) -> Result<Self, ServiceError> {
        let checkpoint = read_checkpoint(bytes)?;
        let checksum = stored_checksum(bytes).ok_or_else(|| CheckpointError::Corrupt("missing checksum".into()))?;
        Ok(Self {
            checkpoint,
            checksum,
            matcher: lexicon.map(PhraseMatcher::new),
        })
    }

    pub fn from_files(checkpoint: &Path, lexicon: Option<&Path>) -> Result<Self, ServiceError> {
        let bytes = std::fs::read(checkpoint).map_err(|source| ServiceError::ReadCheckpoint {
            path: checkpoint.display().to_string(),
            source,
        })?;
        let lexicon = lexicon.map(read_lexicon).transpose()?;
        Self::from_bytes(&bytes, lexicon.as_ref())
    }

    pub fn model_id(&self) -> String {
        format!("{:08x}", self.checksum)
    }

    fn spans(&self, translation: &str) -> Vec<Span> {
        let Some(matcher) = &self.matcher else {
            return Vec::new();
        };
        matcher
            .find(&tokenize(translation, &self.checkpoint.norm))
            .into_iter()
            .map(|s| Span {
                phrase: s.phrase,
                label: s.label,
            })
            .collect()
    }
}

#[derive(Clone, Default)]
pub struct AppState {
    model: Option<Arc<LoadedModel>>,
}

impl AppState {
    pub fn new(model: Option<LoadedModel>) -> Self {
        Self {
            model: model.map(Arc::new),
        }
    }
}

fn default_beams() -> usize {
    1
}

fn default_max_length() -> usize {
    DecodeConfig::default().max_length
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslateRequest {
    pub text: String,
    pub formality: FormalityLabel,
    #[serde(default = "default_beams")]
    pub beams: usize,
    #[serde(default = "default_max_length")]
    pub max_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub phrase: String,
    pub label: FormalityLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateResponse {
    pub translation: String,
    pub applied_formality: FormalityLabel,
    pub spans: Vec<Span>,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_id: String,
    pub config: ModelConfig,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub normalization: NormalizationConfig,
    /// CRC-32 of the checkpoint file, as 8 lowercase hex digits.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    category: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, category: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            category,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid-request", message)
    }

    fn unavailable() -> Self {
        Self::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "model-not-loaded",
            "no model is loaded",
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.category.into(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

fn parse_request(headers: &HeaderMap, body: &[u8]) -> Result<TranslateRequest, ApiError> {
    let content_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("");
    let mime = content_type.split(';').next().unwrap_or("").trim();
    if !mime.eq_ignore_ascii_case("application/json") {
        return Err(ApiError::bad_request("content type must be application/json"));
    }
    let req: TranslateRequest = serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    if req.text.len() > MAX_TEXT_BYTES {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "text-too-long",
            format!("text is {} bytes; the limit is {MAX_TEXT_BYTES}", req.text.len()),
        ));
    }
    if !(1..=MAX_BEAMS).contains(&req.beams) {
        return Err(ApiError::bad_request(format!(
            "beams must be between 1 and {MAX_BEAMS}"
        )));
    }
    if req.max_length == 0 {
        return Err(ApiError::bad_request("max_length must be at least 1"));
    }
    Ok(req)
}

async fn translate(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<TranslateResponse>, ApiError> {
    let model = state.model.clone().ok_or_else(ApiError::unavailable)?;
    let req = parse_request(&headers, &body)?;
    if normalize(&req.text, &model.checkpoint.norm).is_empty() {
        return Err(ApiError::bad_request("text is empty after normalization"));
    }
    let dcfg = DecodeConfig {
        max_length: req.max_length,
        num_beams: req.beams,
        ..Default::default()
    };
    let worker = Arc::clone(&model);
    let hypothesis = tokio::task::spawn_blocking(move || {
        decode(&worker.checkpoint, &req.text, req.formality, &dcfg).map(|h| (h, req.formality))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    let (hypothesis, formality) =
        hypothesis.map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "decode-failed", e.to_string()))?;
    Ok(Json(TranslateResponse {
        spans: model.spans(&hypothesis.text),
        translation: hypothesis.text,
        applied_formality: formality,
        model_id: model.model_id(),
    }))
}

async fn health(State(state): State<AppState>) -> (StatusCode, Json<HealthResponse>) {
    match &state.model {
        Some(m) => (
            StatusCode::OK,
            Json(HealthResponse {
                status: "ok".into(),
                model_id: Some(m.model_id()),
            }),
        ),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(HealthResponse {
                status: "unavailable".into(),
                model_id: None,
            }),
        ),
    }
}

async fn model_info(State(state): State<AppState>) -> Result<Json<ModelInfo>, ApiError> {
    let m = state.model.as_ref().ok_or_else(ApiError::unavailable)?;
    let c = &m.checkpoint;
    Ok(Json(ModelInfo {
        model_id: m.model_id(),
        config: c.config.clone(),
        src_vocab_size: c.src_vocab.len(),
        tgt_vocab_size: c.tgt_vocab.len(),
        normalization: c.norm.clone(),
        checksum: format!("{:08x}", m.checksum),
    }))
}

pub fn cors_layer(origins: &[String]) -> Result<CorsLayer, ServiceError> {
    let origins = origins
        .iter()
        .map(|o| HeaderValue::from_str(o).map_err(|_| ServiceError::InvalidOrigin(o.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CorsLayer::new()
        .allow_origin(AllowOrigin::list(origins))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]))
}

pub fn router(state: AppState, cors_origins: &[String]) -> Result<Router, ServiceError> {
    Ok(Router::new()
        .route("/translate", post(translate))
        .route("/health", get(health))
        .route("/model/info", get(model_info))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(cors_layer(cors_origins)?)
        .with_state(state))
}

/// Binds `host:port` and serves until Ctrl-C.
pub async fn serve(cfg: &ServiceConfig, state: AppState) -> Result<(), ServiceError> {
    let app = router(state, &cfg.cors_origins)?;
    let addr = format!("{}:{}", cfg.host, cfg.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|source| ServiceError::Bind {
            addr: addr.clone(),
            source,
        })?;
    let local: SocketAddr = listener.local_addr()?;
    eprintln!("listening on http://{local}");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// [`serve`] on a fresh multi-threaded runtime.
pub fn serve_blocking(cfg: &ServiceConfig, state: AppState) -> Result<(), ServiceError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(serve(cfg, state))
}
