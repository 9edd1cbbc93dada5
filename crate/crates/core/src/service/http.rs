use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::nn::{Checkpoint, FORMAT_VERSION};
use crate::reward::QoEProfile;
use crate::service::policy::{decide, schedule_video, DecisionRequest};
use crate::trace::{load_trace, VideoTrace};

/// Loaded policies keyed by QoE profile name. Readers clone an `Arc` out,
/// so swapping a checkpoint never affects a request already in flight.
#[derive(Debug, Clone, Default)]
pub struct PolicyStore {
    inner: Arc<RwLock<BTreeMap<String, Arc<Checkpoint>>>>,
}

impl PolicyStore {
    pub fn new(checkpoints: impl IntoIterator<Item = Checkpoint>) -> Self {
        let store = Self::default();
        for c in checkpoints {
            store.insert(c);
        }
        store
    }

    /// Installs (or atomically replaces) the checkpoint for its profile.
    pub fn insert(&self, ckpt: Checkpoint) {
        let mut map = self.inner.write().unwrap_or_else(|e| e.into_inner());
        map.insert(ckpt.profile_name.clone(), Arc::new(ckpt));
    }

    pub fn get(&self, profile: &str) -> Result<Arc<Checkpoint>> {
        let map = self.inner.read().unwrap_or_else(|e| e.into_inner());
        map.get(profile)
            .cloned()
            .ok_or_else(|| Error::CheckpointMissing(profile.to_string()))
    }

    pub fn profiles(&self) -> Vec<String> {
        let map = self.inner.read().unwrap_or_else(|e| e.into_inner());
        map.keys().cloned().collect()
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ScheduleRequest {
    #[serde(default)]
    pub trace: Option<VideoTrace>,
    #[serde(default)]
    pub trace_path: Option<String>,
    pub qoe_profile_name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScheduleResponse {
    pub levels: Vec<usize>,
    pub fps_values: Vec<f64>,
}

struct ApiError(Error);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::BadRequest(_)
            | Error::Validation { .. }
            | Error::Parse { .. }
            | Error::LevelOutOfRange { .. }
            | Error::InvalidRange(_)
            | Error::UnknownProfile(_)
            | Error::Io { .. } => StatusCode::BAD_REQUEST,
            Error::CheckpointMissing(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &str) -> Result<T> {
    serde_json::from_str(body).map_err(|e| Error::BadRequest(format!("malformed JSON: {e}")))
}

async fn health(State(store): State<PolicyStore>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "checkpoint_version": FORMAT_VERSION,
        "profiles": store.profiles(),
    }))
}

async fn decide_handler(
    State(store): State<PolicyStore>,
    body: String,
) -> std::result::Result<Response, ApiError> {
    let request: DecisionRequest = parse_body(&body)?;
    let ckpt = store.get(&request.qoe_profile_name)?;
    let decision = decide(&ckpt, &request)?;
    Ok(Json(decision).into_response())
}

async fn schedule_handler(
    State(store): State<PolicyStore>,
    body: String,
) -> std::result::Result<Response, ApiError> {
    let request: ScheduleRequest = parse_body(&body)?;
    let trace = match (request.trace, request.trace_path) {
        (Some(t), None) => t,
        (None, Some(path)) => load_trace(path)?,
        _ => {
            return Err(Error::BadRequest("give exactly one of trace or trace_path".into()).into())
        }
    };
    trace
        .validate()
        .map_err(|e| Error::BadRequest(e.to_string()))?;
    let ckpt = store.get(&request.qoe_profile_name)?;
    // decisions do not depend on the reward weights; a custom-named policy
    // still needs some profile to drive the simulator
    let profile =
        QoEProfile::preset(&request.qoe_profile_name).unwrap_or_else(|_| QoEProfile::qoe_q());
    let levels = schedule_video(&ckpt, &trace, &profile)?;
    let ladder = trace.ladder()?;
    let fps_values = levels
        .iter()
        .map(|&l| ladder.fps(l))
        .collect::<Result<Vec<_>>>()?;
    Ok(Json(ScheduleResponse { levels, fps_values }).into_response())
}

pub fn router(store: PolicyStore) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/decide", post(decide_handler))
        .route("/v1/schedule", post(schedule_handler))
        .with_state(store)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(store: PolicyStore, addr: &str) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| Error::Bind {
            addr: addr.to_string(),
            source,
        })?;
    if let Ok(local) = listener.local_addr() {
        log::info!("serving {:?} on {local}", store.profiles());
    }
    axum::serve(listener, router(store))
        .await
        .map_err(|source| Error::Bind {
            addr: addr.to_string(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::compute_norm_stats;
    use crate::nn::{build_network, Head};
    use crate::trace::{generate_synthetic, MotionProfile};

    fn checkpoint(profile: &str, seed: u64) -> Checkpoint {
        let t = generate_synthetic(MotionProfile::Dynamic, 3, 1).unwrap();
        Checkpoint {
            actor: build_network(Head::Actor { actions: 5 }, 5, 1, 8, seed).unwrap(),
            critic: build_network(Head::Critic, 5, 1, 8, seed + 1).unwrap(),
            norm: compute_norm_stats(std::slice::from_ref(&t)).unwrap(),
            profile_name: profile.into(),
        }
    }

    #[test]
    fn store_swaps_atomically() {
        let store = PolicyStore::new([checkpoint("qoe_b", 1)]);
        let before = store.get("qoe_b").unwrap();
        store.insert(checkpoint("qoe_b", 7));
        let after = store.get("qoe_b").unwrap();
        assert_ne!(before.fingerprint(), after.fingerprint());
        assert!(matches!(
            store.get("qoe_q"),
            Err(Error::CheckpointMissing(_))
        ));
        assert_eq!(store.profiles(), vec!["qoe_b".to_string()]);
    }
}
