//! HTTP service that turns editor contexts into IFIM model inputs and,
//! when a completion backend is configured, fills them in.
//!
//! * `POST /v1/infill` takes either `{source, cursor, language,
//!   model_profile}` or `{prefix, suffix, instruction?, model_profile}` and
//!   answers `{input, completion?}`.
//! * `GET /v1/profiles` lists the configured model profiles.
//!
//! The service is stateless: profiles are fixed at startup.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use ifim_core::assemble::{assemble_input, parse_request, CompletionRequest, CursorContext};
use ifim_core::eval::{truncate_completion, CompletionBackend, GenerationRequest, DEFAULT_MAX_NEW_TOKENS};
use ifim_core::profile::ProfileSet;

#[derive(Clone)]
pub struct AppState {
    pub profiles: Arc<ProfileSet>,
    pub backend: Option<Arc<dyn CompletionBackend>>,
    pub max_new_tokens: usize,
}

impl AppState {
    pub fn new(profiles: ProfileSet, backend: Option<Arc<dyn CompletionBackend>>) -> Self {
        AppState {
            profiles: Arc::new(profiles),
            backend,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InfillRequest {
    Cursor {
        source: String,
        cursor: usize,
        language: String,
        model_profile: String,
    },
    Split {
        prefix: String,
        suffix: String,
        #[serde(default)]
        instruction: Option<String>,
        model_profile: String,
        #[serde(default = "default_language")]
        language: String,
    },
}

fn default_language() -> String {
    "python".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfillResponse {
    pub input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileInfo {
    pub name: String,
    pub base_mode: String,
    pub default_ifim_mode: String,
    pub sentinels: [String; 4],
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl ToString) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: message.to_string(),
        }
    }

    fn bad_gateway(message: impl ToString) -> Self {
        ApiError {
            status: StatusCode::BAD_GATEWAY,
            message: message.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.message });
        (self.status, Json(body)).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/infill", post(infill))
        .route("/v1/profiles", get(list_profiles))
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

async fn list_profiles(State(state): State<AppState>) -> Json<Vec<ProfileInfo>> {
    let infos = state
        .profiles
        .profiles
        .iter()
        .map(|p| ProfileInfo {
            name: p.name.clone(),
            base_mode: p.base_mode.name().to_string(),
            default_ifim_mode: p.default_ifim_mode.canonical_name(),
            sentinels: p.sentinels.all().map(|s| s.to_string()),
        })
        .collect();
    Json(infos)
}

/// Resolves a request body to a completion request without touching the
/// backend.
pub fn to_completion_request(body: InfillRequest, profiles: &ProfileSet) -> ifim_core::Result<CompletionRequest> {
    match body {
        InfillRequest::Cursor {
            source,
            cursor,
            language,
            model_profile,
        } => parse_request(
            &CursorContext {
                source,
                cursor,
                language,
            },
            &profiles.markers,
            &model_profile,
        ),
        InfillRequest::Split {
            prefix,
            suffix,
            instruction,
            model_profile,
            language,
        } => Ok(CompletionRequest {
            prefix,
            suffix,
            instruction: instruction.filter(|i| !i.trim().is_empty()),
            language,
            model_profile,
            removed: None,
        }),
    }
}

async fn infill(State(state): State<AppState>, body: Bytes) -> Result<Json<InfillResponse>, ApiError> {
    let body: InfillRequest = serde_json::from_slice(&body).map_err(ApiError::bad_request)?;
    let request = to_completion_request(body, &state.profiles).map_err(ApiError::bad_request)?;
    let profile = state
        .profiles
        .get(&request.model_profile)
        .map_err(ApiError::bad_request)?
        .clone();
    let input = assemble_input(&request, &profile).map_err(ApiError::bad_request)?;

    let Some(backend) = state.backend.clone() else {
        return Ok(Json(InfillResponse {
            input,
            completion: None,
        }));
    };
    let max_new_tokens = state.max_new_tokens;
    let prompt = input.clone();
    let completion = tokio::task::spawn_blocking(move || {
        let stop = profile.stop_strings();
        let raw = backend.generate(&GenerationRequest {
            input: &prompt,
            max_new_tokens,
            greedy: true,
            stop: &stop,
            task: None,
        })?;
        Ok::<_, ifim_core::Error>(truncate_completion(&raw, &stop).to_string())
    })
    .await
    .map_err(ApiError::bad_gateway)?
    .map_err(ApiError::bad_gateway)?;
    Ok(Json(InfillResponse {
        input,
        completion: Some(completion),
    }))
}
