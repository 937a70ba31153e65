//! HTTP API over one or two immutable checkpoints and a hot-swappable profile.
//!
//! Posts are tokenized by whitespace split and lowercasing; words outside the
//! vocabulary become `<unk>`. The model is stateless across turns, so
//! `session_id` is only echoed back for the client's bookkeeping.

use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use persona_core::corpus::{tokenize, Profile};
use persona_core::inference::{generate, KeyProb, Route, SystemVariant};
use persona_core::model::{AnchorMode, Checkpoint, DecodeMode};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Error body: `{"error": kind, "message": text}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, kind, message: message.into() }
    }

    fn bad_json(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "malformed_json", message)
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", message)
    }
}

impl From<persona_core::Error> for ApiError {
    fn from(e: persona_core::Error) -> Self {
        let status = match e.kind() {
            "domain" | "config" => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.kind(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.kind, "message": self.message });
        (self.status, Json(body)).into_response()
    }
}

/// Parses the body ourselves so every JSON problem, syntax or shape, is a 400.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_json(e.to_string()))
}

/// Shared server state. Checkpoints are never mutated; the profile and the
/// active variant are replaced whole under a lock.
pub struct AppState {
    detected: Option<Arc<Checkpoint>>,
    random: Option<Arc<Checkpoint>>,
    keys: Vec<String>,
    profile: RwLock<Arc<Profile>>,
    variant: RwLock<SystemVariant>,
    mode: DecodeMode,
}

impl AppState {
    /// `detected` serves every variant but ICCM-Pos, `random` serves ICCM-Pos.
    pub fn new(
        detected: Option<Checkpoint>,
        random: Option<Checkpoint>,
        profile: Profile,
        mode: DecodeMode,
    ) -> persona_core::Result<Self> {
        use persona_core::Error;
        for (ckpt, want) in [(&detected, AnchorMode::Detected), (&random, AnchorMode::Random)] {
            if let Some(c) = ckpt {
                if c.anchor_mode != want {
                    return Err(Error::Contract(format!(
                        "expected a checkpoint trained with {want:?} anchors, got {:?}",
                        c.anchor_mode
                    )));
                }
            }
        }
        let keys = match (&detected, &random) {
            (Some(a), Some(b)) if a.keys != b.keys => {
                return Err(Error::Config("the two checkpoints were trained on different profile keys".into()))
            }
            (Some(c), _) | (None, Some(c)) => c.keys.clone(),
            (None, None) => return Err(Error::Config("no checkpoint loaded".into())),
        };
        if profile.keys().ne(keys.iter().map(String::as_str)) {
            return Err(Error::Config(format!(
                "profile keys {:?} do not match checkpoint keys {keys:?}",
                profile.keys().collect::<Vec<_>>()
            )));
        }
        let variant = if detected.is_some() { SystemVariant::Iccm } else { SystemVariant::IccmPos };
        Ok(AppState {
            detected: detected.map(Arc::new),
            random: random.map(Arc::new),
            keys,
            profile: RwLock::new(Arc::new(profile)),
            variant: RwLock::new(variant),
            mode,
        })
    }

    fn checkpoint(&self, variant: SystemVariant) -> Option<Arc<Checkpoint>> {
        match variant.anchor_mode() {
            AnchorMode::Detected => self.detected.clone(),
            AnchorMode::Random => self.random.clone(),
        }
    }

    pub fn available(&self) -> Vec<SystemVariant> {
        SystemVariant::ALL.into_iter().filter(|v| self.checkpoint(*v).is_some()).collect()
    }

    pub fn profile(&self) -> Arc<Profile> {
        self.profile.read().expect("profile lock").clone()
    }

    pub fn variant(&self) -> SystemVariant {
        *self.variant.read().expect("variant lock")
    }

    /// Overwrites the listed keys and publishes the result as one new profile.
    pub fn update_profile(&self, changes: &Map<String, Value>) -> Result<Arc<Profile>, ApiError> {
        let mut slot = self.profile.write().expect("profile lock");
        let mut next = (**slot).clone();
        for (key, value) in changes {
            let Some(value) = value.as_str() else {
                return Err(ApiError::unprocessable(format!("value for {key:?} must be a string")));
            };
            if !self.keys.contains(key) {
                return Err(ApiError::unprocessable(format!("unknown profile key {key:?}")));
            }
            next.set(key, value.trim().to_lowercase())?;
        }
        let next = Arc::new(next);
        *slot = next.clone();
        Ok(next)
    }

    pub fn set_variant(&self, name: &str) -> Result<SystemVariant, ApiError> {
        let variant: SystemVariant = name
            .parse()
            .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "unknown_variant", format!("unknown variant {name:?}")))?;
        if self.checkpoint(variant).is_none() {
            return Err(ApiError::new(
                StatusCode::NOT_FOUND,
                "unknown_variant",
                format!("no checkpoint loaded for variant {}", variant.label()),
            ));
        }
        *self.variant.write().expect("variant lock") = variant;
        Ok(variant)
    }
}

#[derive(Debug, Deserialize)]
struct ChatRequest {
    session_id: String,
    post: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub session_id: String,
    pub variant: SystemVariant,
    pub response: String,
    pub used_profile: bool,
    pub z_prob: f64,
    pub key_dist: Vec<KeyProb>,
    pub key: String,
    pub value: Option<String>,
    pub y_b: Vec<String>,
    pub y_f: Vec<String>,
    pub route: Route,
    pub unk_count: usize,
}

#[derive(Debug, Serialize)]
struct VariantInfo {
    name: &'static str,
    label: &'static str,
    available: bool,
}

#[derive(Debug, Serialize)]
struct VariantList {
    current: SystemVariant,
    variants: Vec<VariantInfo>,
}

#[derive(Debug, Deserialize)]
struct VariantRequest {
    name: String,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/chat", post(chat))
        .route("/api/profile", get(get_profile).put(put_profile))
        .route("/api/variants", get(list_variants))
        .route("/api/variant", post(switch_variant))
        .with_state(state)
}

async fn health() -> Json<Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn chat(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<ChatResponse>, ApiError> {
    let req: ChatRequest = parse_body(&body)?;
    let post = tokenize(&req.post);
    if post.is_empty() {
        return Err(ApiError::unprocessable("post is empty"));
    }
    let variant = state.variant();
    let profile = state.profile();
    let ckpt = state.checkpoint(variant).expect("active variant always has a checkpoint");
    let mode = state.mode;
    let trace = tokio::task::spawn_blocking(move || generate(&ckpt, &profile, &post, variant, mode))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(ChatResponse {
        session_id: req.session_id,
        variant,
        response: trace.response_text(),
        used_profile: trace.used_profile,
        z_prob: trace.z_prob,
        key_dist: trace.key_dist,
        key: trace.key,
        value: trace.value,
        y_b: trace.y_b,
        y_f: trace.y_f,
        route: trace.route,
        unk_count: trace.unk_count,
    }))
}

async fn get_profile(State(state): State<Arc<AppState>>) -> Json<Profile> {
    Json((*state.profile()).clone())
}

async fn put_profile(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<Profile>, ApiError> {
    let changes: Map<String, Value> = parse_body(&body)?;
    let profile = state.update_profile(&changes)?;
    log::info!("profile updated: {}", serde_json::to_string(&*profile).unwrap_or_default());
    Ok(Json((*profile).clone()))
}

fn variant_list(state: &AppState) -> VariantList {
    let available = state.available();
    VariantList {
        current: state.variant(),
        variants: SystemVariant::ALL
            .into_iter()
            .map(|v| VariantInfo { name: v.name(), label: v.label(), available: available.contains(&v) })
            .collect(),
    }
}

async fn list_variants(State(state): State<Arc<AppState>>) -> Json<VariantList> {
    Json(variant_list(&state))
}

async fn switch_variant(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<VariantList>, ApiError> {
    let req: VariantRequest = parse_body(&body)?;
    state.set_variant(&req.name)?;
    Ok(Json(variant_list(&state)))
}
