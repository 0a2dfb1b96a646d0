//! Stateless HTTP service over a loaded snapshot.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use msdpp::dataio::{default_pref_weights, SweepKind};
use msdpp::engine::TnMode;
use msdpp::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::pipeline::{GalleryMeta, Method, Overrides, Parallelism, QuerySummary, RerankRequest, RerankResponse, Snapshot};
use crate::sweep::{weight_sweep, SweepOptions, SweepReport};

/// Machine-readable error body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic_id: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
                diagnostic_id: None,
            },
        }
    }

    fn internal(message: impl std::fmt::Display) -> Self {
        let id = uuid::Uuid::new_v4().to_string();
        log::error!("request failed [{id}]: {message}");
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ErrorBody {
                code: "internal".into(),
                message: format!("internal error; diagnostic id {id}"),
                diagnostic_id: Some(id),
            },
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        if e.is_user_error() {
            ApiError::new(StatusCode::BAD_REQUEST, "invalid_parameters", e.to_string())
        } else {
            ApiError::internal(e)
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Parses a JSON body, reporting the path of the offending field.
fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_body", format!("{path}: {}", e.inner()))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRequest {
    pub attribute: String,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub tn_modes: Option<Vec<TnMode>>,
    #[serde(default)]
    pub query_ids: Option<Vec<String>>,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub overrides: Option<Overrides>,
}

type Shared = Arc<Snapshot>;

pub fn router(snapshot: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/queries", get(queries))
        .route("/gallery/meta", get(gallery_meta))
        .route("/rerank", post(rerank))
        .route("/sweep", post(sweep))
        .with_state(snapshot)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn queries(State(s): State<Shared>) -> Json<Vec<QuerySummary>> {
    Json(s.query_summaries())
}

async fn gallery_meta(State(s): State<Shared>) -> Json<GalleryMeta> {
    Json(s.meta())
}

fn check_query(s: &Snapshot, id: &str) -> Result<(), ApiError> {
    match s.query(id) {
        Some(_) => Ok(()),
        None => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_query",
            format!("unknown query id '{id}'"),
        )),
    }
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> msdpp::Result<T> + Send + 'static,
) -> Result<T, ApiError> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError::internal(e)),
    }
}

pub fn handle_rerank(s: &Snapshot, req: &RerankRequest) -> msdpp::Result<RerankResponse> {
    let config = match &req.overrides {
        Some(o) => o.apply(&s.config)?,
        None => s.config.clone(),
    };
    let query = s.query(&req.query_id).ok_or_else(|| crate::pipeline::unknown_query(&req.query_id))?;
    s.rerank_query(query, &config, req.method, req.include_diagnostics, Parallelism::Parallel)
}

async fn rerank(State(s): State<Shared>, body: Bytes) -> Result<Json<RerankResponse>, ApiError> {
    let req: RerankRequest = parse_body(&body)?;
    check_query(&s, &req.query_id)?;
    blocking(move || handle_rerank(&s, &req)).await.map(Json)
}

pub fn handle_sweep(s: &Snapshot, req: &SweepRequest) -> msdpp::Result<SweepReport> {
    let mut config = match &req.overrides {
        Some(o) => o.apply(&s.config)?,
        None => s.config.clone(),
    };
    config.sweep.kind = SweepKind::Weight;
    config.sweep.attribute = Some(req.attribute.clone());
    config.sweep.weights = req.weights.clone().unwrap_or_else(default_pref_weights);
    config.sweep.tn_modes = req.tn_modes.clone().unwrap_or_default();
    config.validate()?;
    let opts = SweepOptions {
        method: req.method,
        query_ids: req.query_ids.clone(),
        overrides: None,
        parallelism: Parallelism::Parallel,
    };
    weight_sweep(s, &config, &opts)
}

async fn sweep(State(s): State<Shared>, body: Bytes) -> Result<Json<SweepReport>, ApiError> {
    let req: SweepRequest = parse_body(&body)?;
    for id in req.query_ids.iter().flatten() {
        check_query(&s, id)?;
    }
    blocking(move || handle_sweep(&s, &req)).await.map(Json)
}

/// Serves until interrupted.
pub async fn serve(snapshot: Snapshot, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(snapshot)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
