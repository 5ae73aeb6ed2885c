//! Local HTTP service exposing the analysis engine.
//!
//! * `POST /v1/analyze` takes `{"functions": [{"id", "code"}]}` or
//!   `{"file_text", "file"?}` and answers with a diagnostic report.
//! * `GET /v1/health` reports readiness and the loaded model hashes.
//!
//! The engine is installed once and then only read, so requests never
//! contend on it.

use std::collections::{BTreeMap, BTreeSet};
use std::future::Future;
use std::net::SocketAddr;
use std::sync::{Arc, OnceLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use vulnhunter::engine::{Analysis, Engine, Report};

pub const OPENAPI: &str = include_str!("../openapi.json");
pub const DEFAULT_PORT: u16 = 8731;

#[derive(Default)]
pub struct AppState {
    engine: OnceLock<Arc<Engine>>,
}

impl AppState {
    pub fn new(engine: Option<Engine>) -> Arc<Self> {
        let state = Self::default();
        if let Some(e) = engine {
            let _ = state.engine.set(Arc::new(e));
        }
        Arc::new(state)
    }

    /// Install the engine; fails if one is already loaded.
    pub fn set_engine(&self, engine: Engine) -> Result<(), Engine> {
        self.engine
            .set(Arc::new(engine))
            .map_err(|e| Arc::try_unwrap(e).expect("rejected engine is unshared"))
    }

    pub fn engine(&self) -> Option<Arc<Engine>> {
        self.engine.get().cloned()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FunctionInput {
    id: String,
    code: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalyzeRequest {
    functions: Option<Vec<FunctionInput>>,
    file_text: Option<String>,
    /// Label for `file_text` diagnostics.
    file: Option<String>,
}

#[derive(Debug, Serialize)]
struct Health<'a> {
    status: &'a str,
    model_hashes: BTreeMap<String, String>,
    version: &'a str,
}

fn error(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    let body = json!({"error": {"code": code, "message": message.into()}});
    (status, Json(body)).into_response()
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    match state.engine() {
        Some(e) => Json(Health {
            status: "ok",
            model_hashes: e.model_hashes().clone(),
            version: vulnhunter::VERSION,
        })
        .into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(Health {
                status: "unavailable",
                model_hashes: BTreeMap::new(),
                version: vulnhunter::VERSION,
            }),
        )
            .into_response(),
    }
}

enum Input {
    Functions(Vec<FunctionInput>),
    File { name: String, text: String },
}

fn parse_request(body: &[u8]) -> Result<Input, String> {
    let req: AnalyzeRequest = serde_json::from_slice(body).map_err(|e| format!("invalid request body: {e}"))?;
    match (req.functions, req.file_text) {
        (Some(fs), None) => {
            if req.file.is_some() {
                return Err("`file` only applies to `file_text`".into());
            }
            let mut seen = BTreeSet::new();
            for f in &fs {
                if !seen.insert(f.id.as_str()) {
                    return Err(format!("duplicate function id {:?}", f.id));
                }
            }
            Ok(Input::Functions(fs))
        }
        (None, Some(text)) => Ok(Input::File {
            name: req.file.unwrap_or_else(|| "<input>".to_string()),
            text,
        }),
        _ => Err("expected exactly one of `functions` or `file_text`".into()),
    }
}

fn run_analysis(engine: &Engine, input: Input) -> Analysis {
    match input {
        Input::File { name, text } => engine.analyze_source(&name, &text),
        Input::Functions(fs) => {
            let mut all = Analysis::default();
            for f in fs {
                let a = engine.analyze_source(&f.id, &f.code);
                all.diagnostics.extend(a.diagnostics);
                all.warnings.extend(a.warnings);
                all.truncated.extend(a.truncated);
            }
            all
        }
    }
}

async fn analyze(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let Some(engine) = state.engine() else {
        return error(
            StatusCode::SERVICE_UNAVAILABLE,
            "models_not_loaded",
            "models are not loaded yet",
        );
    };
    let input = match parse_request(&body) {
        Ok(i) => i,
        Err(m) => return error(StatusCode::BAD_REQUEST, "bad_request", m),
    };
    let analysis = match tokio::task::spawn_blocking(move || run_analysis(&engine, input)).await {
        Ok(a) => a,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    };
    let truncated = analysis.truncated.clone();
    let report: Report = analysis.into_report();
    if truncated.is_empty() {
        Json(report).into_response()
    } else {
        let body = json!({
            "error": {
                "code": "function_too_long",
                "message": "some functions exceed the model input length and were analyzed truncated",
            },
            "truncated": truncated,
            "report": report,
        });
        (StatusCode::UNPROCESSABLE_ENTITY, Json(body)).into_response()
    }
}

async fn openapi() -> Response {
    ([(axum::http::header::CONTENT_TYPE, "application/json")], OPENAPI).into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/analyze", post(analyze))
        .route("/v1/health", get(health))
        .route("/v1/openapi.json", get(openapi))
        .with_state(state)
}

/// Serve on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Loopback address on `port`.
pub fn local_addr(port: u16) -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], port))
}
