//! HTTP API: upload a mesh once, then re-run clustering and connectivity
//! cheaply for each bandwidth.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use rigforge_core::autodiff::Tensor;
use rigforge_core::connectivity::Skeleton;
use rigforge_core::joints::{check_bandwidth, BANDWIDTH_RANGE};
use rigforge_core::mesh::Mesh;
use rigforge_core::rig::{Models, PipelineError, Prepared, RigOptions};

struct Entry {
    prepared: Prepared,
    skeleton: Option<Skeleton>,
    skin: Option<Tensor>,
}

pub struct AppState {
    models: Models,
    entries: Mutex<HashMap<u64, Arc<tokio::sync::Mutex<Entry>>>>,
    next_id: AtomicU64,
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let code = if e.is_validation() { StatusCode::UNPROCESSABLE_ENTITY } else { StatusCode::INTERNAL_SERVER_ERROR };
        ApiError(code, e.to_string())
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelResponse {
    pub model_id: u64,
    pub vertex_count: usize,
    pub learned_bandwidth: f64,
    pub bandwidth_range: [f64; 2],
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SkeletonRequest {
    pub model_id: u64,
    #[serde(default)]
    pub bandwidth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointJson {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonResponse {
    pub joints: Vec<JointJson>,
    /// `[parent, child]` joint indices.
    pub bones: Vec<[usize; 2]>,
    pub root: usize,
    pub bandwidth: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SkinResponse {
    pub bones: Vec<[usize; 2]>,
    /// One row per vertex, one column per bone.
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MeshResponse {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

pub fn router(models: Models) -> Router {
    let state = Arc::new(AppState { models, entries: Mutex::new(HashMap::new()), next_id: AtomicU64::new(1) });
    Router::new()
        .route("/model", post(post_model))
        .route("/skeleton", post(post_skeleton))
        .route("/skin/:id", get(get_skin))
        .route("/mesh/:id", get(get_mesh))
        .with_state(state)
}

fn entry(state: &AppState, id: u64) -> Result<Arc<tokio::sync::Mutex<Entry>>, ApiError> {
    let entries = state.entries.lock().map_err(internal)?;
    entries.get(&id).cloned().ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown model {id}")))
}

async fn post_model(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<ModelResponse>, ApiError> {
    let mesh = Mesh::from_obj(&body).map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let s = state.clone();
    let prepared = tokio::task::spawn_blocking(move || s.models.prepare(&mesh)).await.map_err(internal)??;
    let id = state.next_id.fetch_add(1, Ordering::Relaxed);
    let response = ModelResponse {
        model_id: id,
        vertex_count: prepared.mesh.vertex_count(),
        learned_bandwidth: prepared.learned_bandwidth,
        bandwidth_range: [BANDWIDTH_RANGE.0, BANDWIDTH_RANGE.1],
    };
    let e = Entry { prepared, skeleton: None, skin: None };
    state.entries.lock().map_err(internal)?.insert(id, Arc::new(tokio::sync::Mutex::new(e)));
    Ok(Json(response))
}

fn skeleton_json(skeleton: &Skeleton, mesh: &Mesh, bandwidth: f64) -> SkeletonResponse {
    let n = mesh.normalization();
    SkeletonResponse {
        joints: skeleton
            .joints()
            .iter()
            .map(|p| {
                let q = n.invert(p);
                JointJson { x: q.x, y: q.y, z: q.z }
            })
            .collect(),
        bones: skeleton.bones().into_iter().map(|(p, c)| [p, c]).collect(),
        root: skeleton.root(),
        bandwidth,
    }
}

async fn post_skeleton(State(state): State<Arc<AppState>>, Json(req): Json<SkeletonRequest>) -> Result<Json<SkeletonResponse>, ApiError> {
    let slot = entry(&state, req.model_id)?;
    if let Some(h) = req.bandwidth {
        check_bandwidth(h).map_err(|_| {
            ApiError(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!("bandwidth {h} outside the valid range [{}, {}]", BANDWIDTH_RANGE.0, BANDWIDTH_RANGE.1),
            )
        })?;
    }
    let mut guard = slot.lock_owned().await;
    let s = state.clone();
    let bandwidth = req.bandwidth;
    let (guard_back, result) = tokio::task::spawn_blocking(move || {
        let opts = RigOptions { bandwidth, symmetry: true };
        let result = s.models.bandwidth(&guard.prepared, &opts).and_then(|h| {
            let sk = s.models.skeleton(&guard.prepared, &opts)?;
            Ok((sk, h))
        });
        if let Ok((sk, _)) = &result {
            guard.skeleton = Some(sk.clone());
            guard.skin = None;
        }
        (guard, result)
    })
    .await
    .map_err(internal)?;
    let (skeleton, h) = result?;
    Ok(Json(skeleton_json(&skeleton, &guard_back.prepared.mesh, h)))
}

async fn get_skin(State(state): State<Arc<AppState>>, Path(id): Path<u64>) -> Result<Json<SkinResponse>, ApiError> {
    let slot = entry(&state, id)?;
    let mut guard = slot.lock_owned().await;
    let Some(skeleton) = guard.skeleton.clone() else {
        return Err(ApiError(StatusCode::CONFLICT, "no skeleton yet; POST /skeleton first".into()));
    };
    if guard.skin.is_none() {
        let s = state.clone();
        guard = tokio::task::spawn_blocking(move || -> Result<_, PipelineError> {
            let w = s.models.skin_weights(&guard.prepared, &skeleton)?;
            guard.skin = Some(w);
            Ok(guard)
        })
        .await
        .map_err(internal)??;
    }
    let skeleton = guard.skeleton.as_ref().expect("checked above");
    let w = guard.skin.as_ref().expect("computed above");
    Ok(Json(SkinResponse {
        bones: skeleton.bones().into_iter().map(|(p, c)| [p, c]).collect(),
        weights: (0..w.rows()).map(|v| w.row_slice(v).to_vec()).collect(),
    }))
}

async fn get_mesh(State(state): State<Arc<AppState>>, Path(id): Path<u64>) -> Result<Json<MeshResponse>, ApiError> {
    let slot = entry(&state, id)?;
    let guard = slot.lock().await;
    let mesh = &guard.prepared.mesh;
    let n = mesh.normalization();
    Ok(Json(MeshResponse {
        vertices: mesh.vertices().iter().map(|p| n.invert(p)).map(|q| [q.x, q.y, q.z]).collect(),
        triangles: mesh.triangles().to_vec(),
    }))
}
