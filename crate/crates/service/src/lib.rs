//! Local review service over a directory of assets.
//!
//! Every subdirectory of the root holding an `asset.json` is one asset, keyed by
//! the directory name. Review transitions go to `review.jsonl` next to it.
//! There is no authentication; bind to localhost. See `API.md` for the wire format.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use physasset::annotate::{ReviewEvent, ReviewLog, ReviewState, ReviewStatus};
use physasset::asset::{asset_json, load_asset, save_asset, validate_asset, KinematicConstraint, KinematicKind, ObjectAsset};
use physasset::kinematics::{finalize_selection, review_candidates, AxisCandidate, KinematicsConfig, KinematicsError};
use physasset::{canonical_json, fixtures, sha256_hex};
use serde::{Deserialize, Serialize};
use tokio::sync::RwLock;

pub const REVIEW_LOG: &str = "review.jsonl";
/// Response header carrying the asset's version counter.
pub const VERSION_HEADER: &str = "x-asset-version";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("stale version {given}, current is {current}")]
    Stale { given: u64, current: u64 },
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid request: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("{0}")]
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    details: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    current_version: Option<u64>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, code) = match &self {
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ServiceError::Stale { .. } => (StatusCode::CONFLICT, "stale_version"),
            ServiceError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ServiceError::Invalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
            ServiceError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let body = ErrorBody {
            error: code,
            message: self.to_string(),
            details: match &self {
                ServiceError::Invalid(d) => d.clone(),
                _ => Vec::new(),
            },
            current_version: match &self {
                ServiceError::Stale { current, .. } => Some(*current),
                _ => None,
            },
        };
        json_response(status, canonical_json(&body))
    }
}

fn json_response(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn internal(e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Internal(e.to_string())
}

struct Entry {
    dir: PathBuf,
    asset: ObjectAsset,
    review: ReviewState,
    version: u64,
}

type CacheKey = (String, u32, u32, KinematicKind, String);

struct Inner {
    assets: BTreeMap<String, Arc<RwLock<Entry>>>,
    kinematics: KinematicsConfig,
    cache: Mutex<HashMap<CacheKey, Arc<String>>>,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Loads every asset under `root`, replaying review logs.
    pub fn open(root: &Path, kinematics: KinematicsConfig) -> Result<Self, ServiceError> {
        let mut assets = BTreeMap::new();
        let entries = std::fs::read_dir(root).map_err(|e| internal(format!("{}: {e}", root.display())))?;
        let mut dirs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(physasset::asset::ASSET_FILE).is_file())
            .collect();
        dirs.sort();
        for dir in dirs {
            let id = dir.file_name().unwrap().to_string_lossy().into_owned();
            let asset = load_asset(&dir).map_err(|e| internal(format!("{id}: {e}")))?;
            let review = ReviewLog::open(&dir.join(REVIEW_LOG))
                .map_err(|e| internal(format!("{id}: {e}")))?
                .state()
                .clone();
            log::info!("loaded {id} ({} parts, {:?})", asset.parts.len(), review.status);
            assets.insert(
                id,
                Arc::new(RwLock::new(Entry {
                    dir,
                    asset,
                    review,
                    version: 0,
                })),
            );
        }
        Ok(Self(Arc::new(Inner {
            assets,
            kinematics,
            cache: Mutex::new(HashMap::new()),
        })))
    }

    fn entry(&self, id: &str) -> Result<Arc<RwLock<Entry>>, ServiceError> {
        self.0
            .assets
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("asset {id}")))
    }

    /// Number of cached candidate lists.
    pub fn cached_candidates(&self) -> usize {
        self.0.cache.lock().unwrap().len()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/assets", get(list_assets))
        .route("/assets/{id}", get(get_asset))
        .route("/assets/{id}/mesh/{part}", get(get_mesh))
        .route("/assets/{id}/candidates/{child}/{parent}", get(get_candidates))
        .route("/assets/{id}/selection", post(post_selection))
        .route("/assets/{id}/review", post(post_review))
        .with_state(state)
}

/// Serves `root` on `addr` until the process is stopped.
pub async fn serve(root: &Path, addr: SocketAddr, kinematics: KinematicsConfig) -> Result<(), ServiceError> {
    let state = AppState::open(root, kinematics)?;
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(internal)?;
    log::info!("listening on {}", listener.local_addr().map_err(internal)?);
    axum::serve(listener, router(state)).await.map_err(internal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetSummary {
    pub id: String,
    pub object_name: String,
    pub category: String,
    pub parts: usize,
    pub constraints: usize,
    pub review: ReviewState,
    pub version: u64,
}

async fn list_assets(State(state): State<AppState>) -> Response {
    let mut out = Vec::new();
    for (id, entry) in &state.0.assets {
        let e = entry.read().await;
        out.push(AssetSummary {
            id: id.clone(),
            object_name: e.asset.object_name.clone(),
            category: e.asset.category.clone(),
            parts: e.asset.parts.len(),
            constraints: e.asset.constraints.len(),
            review: e.review.clone(),
            version: e.version,
        });
    }
    json_response(StatusCode::OK, canonical_json(&out))
}

fn with_version(mut r: Response, version: u64) -> Response {
    r.headers_mut()
        .insert(VERSION_HEADER, HeaderValue::from_str(&version.to_string()).unwrap());
    r
}

async fn get_asset(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ServiceError> {
    let entry = state.entry(&id)?;
    let e = entry.read().await;
    Ok(with_version(json_response(StatusCode::OK, asset_json(&e.asset)), e.version))
}

async fn get_mesh(
    State(state): State<AppState>,
    UrlPath((id, part)): UrlPath<(String, u32)>,
) -> Result<Response, ServiceError> {
    let entry = state.entry(&id)?;
    let e = entry.read().await;
    let p = e
        .asset
        .part(part)
        .ok_or_else(|| ServiceError::NotFound(format!("part {part} of {id}")))?;
    let r = (
        StatusCode::OK,
        [(header::CONTENT_TYPE, "application/octet-stream")],
        p.mesh.to_binary(),
    )
        .into_response();
    Ok(with_version(r, e.version))
}

#[derive(Debug, Deserialize)]
pub struct KindQuery {
    pub kind: Option<KinematicKind>,
}

fn kinematics_error(e: KinematicsError) -> ServiceError {
    match e {
        KinematicsError::UnknownPart(p) => ServiceError::NotFound(format!("part {p}")),
        other => ServiceError::Invalid(vec![other.to_string()]),
    }
}

/// Kind from the query, else from an existing joint on the same pair.
fn pair_kind(asset: &ObjectAsset, child: u32, parent: u32, query: Option<KinematicKind>) -> Result<KinematicKind, ServiceError> {
    for p in [child, parent] {
        if asset.part(p).is_none() {
            return Err(ServiceError::NotFound(format!("part {p}")));
        }
    }
    query
        .or_else(|| {
            asset
                .constraints
                .iter()
                .find(|c| c.child_part == Some(child) && c.parent_part == Some(parent))
                .map(|c| c.kind)
        })
        .ok_or_else(|| ServiceError::Invalid(vec!["kind: no joint on this pair; pass ?kind=".into()]))
}

async fn get_candidates(
    State(state): State<AppState>,
    UrlPath((id, child, parent)): UrlPath<(String, u32, u32)>,
    Query(q): Query<KindQuery>,
) -> Result<Response, ServiceError> {
    let entry = state.entry(&id)?;
    let (asset, version) = {
        let e = entry.read().await;
        (e.asset.clone(), e.version)
    };
    let kind = pair_kind(&asset, child, parent, q.kind)?;
    let config = state.0.kinematics.clone();
    let key = (sha256_hex(asset_json(&asset).as_bytes()), child, parent, kind, config.hash());
    if let Some(hit) = state.0.cache.lock().unwrap().get(&key).cloned() {
        return Ok(with_version(json_response(StatusCode::OK, hit.to_string()), version));
    }
    let body = tokio::task::spawn_blocking(move || {
        review_candidates(&asset, child, parent, kind, &config).map(|c| canonical_json(&c))
    })
    .await
    .map_err(internal)?
    .map_err(kinematics_error)?;
    let body = Arc::new(body);
    state.0.cache.lock().unwrap().insert(key, body.clone());
    Ok(with_version(json_response(StatusCode::OK, body.to_string()), version))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePick {
    pub kind: KinematicKind,
    pub child: u32,
    pub parent: u32,
    pub candidate: AxisCandidate,
    /// Overrides the default range for the kind.
    #[serde(default)]
    pub range: Option<[f64; 2]>,
}

/// Body of `POST /assets/{id}/selection`: exactly one of `candidate` or `constraint`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionRequest {
    pub version: u64,
    pub editor: String,
    #[serde(default)]
    pub timestamp: Option<String>,
    #[serde(default)]
    pub candidate: Option<CandidatePick>,
    #[serde(default)]
    pub constraint: Option<KinematicConstraint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResponse {
    pub version: u64,
    pub constraint: KinematicConstraint,
    pub review: ReviewState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Approve,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewRequest {
    pub version: u64,
    pub editor: String,
    pub decision: Decision,
    #[serde(default)]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewResponse {
    pub version: u64,
    pub review: ReviewState,
}

fn now() -> String {
    humantime::format_rfc3339_seconds(std::time::SystemTime::now()).to_string()
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::Invalid(vec![e.to_string()]))
}

fn check_version(e: &Entry, given: u64) -> Result<(), ServiceError> {
    if e.version != given {
        return Err(ServiceError::Stale {
            given,
            current: e.version,
        });
    }
    Ok(())
}

/// Validates the transition before anything is written, then persists it.
fn append_review(e: &mut Entry, id: &str, ev: ReviewEvent) -> Result<(), ServiceError> {
    let mut log = ReviewLog::open(&e.dir.join(REVIEW_LOG)).map_err(internal)?;
    if log.state() != &e.review {
        return Err(internal(format!("{id}: review log changed on disk")));
    }
    e.review = log.append(&ev).map_err(|err| ServiceError::Conflict(err.to_string()))?.clone();
    Ok(())
}

async fn post_selection(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: axum::body::Bytes,
) -> Result<Response, ServiceError> {
    let req: SelectionRequest = parse_body(&body)?;
    let entry = state.entry(&id)?;
    let mut e = entry.write().await;
    check_version(&e, req.version)?;
    let constraint = match (&req.candidate, &req.constraint) {
        (Some(pick), None) => {
            pair_kind(&e.asset, pick.child, pick.parent, Some(pick.kind))?;
            let stub = KinematicConstraint::stub(pick.kind, pick.parent, pick.child);
            finalize_selection(&e.asset, &stub, &pick.candidate, pick.range, &state.0.kinematics)
        }
        (None, Some(c)) => {
            let (child, parent) = (c.child_part.unwrap_or(0), c.parent_part.unwrap_or(0));
            if c.kind.has_parts() {
                pair_kind(&e.asset, child, parent, Some(c.kind))?;
            }
            KinematicConstraint {
                finalized: true,
                ..c.clone()
            }
        }
        _ => {
            return Err(ServiceError::Invalid(vec![
                "exactly one of candidate or constraint is required".into(),
            ]))
        }
    };
    let violations = constraint.violations("constraint");
    if !violations.is_empty() {
        return Err(ServiceError::Invalid(violations.iter().map(|v| v.to_string()).collect()));
    }
    let mut asset = e.asset.clone();
    match asset
        .constraints
        .iter_mut()
        .find(|c| c.kind.has_parts() && c.child_part == constraint.child_part)
    {
        Some(slot) => *slot = constraint.clone(),
        None => asset.constraints.push(constraint.clone()),
    }
    let violations = validate_asset(&asset);
    if !violations.is_empty() {
        return Err(ServiceError::Invalid(violations.iter().map(|v| v.to_string()).collect()));
    }
    let json = asset_json(&asset);
    if !e.review.status.can_move_to(ReviewStatus::HumanEdited) {
        return Err(ServiceError::Conflict(format!(
            "selection not allowed while review is {:?}",
            e.review.status
        )));
    }
    save_asset(&asset, &e.dir).map_err(internal)?;
    let ev = ReviewEvent {
        asset_id: id.clone(),
        to: ReviewStatus::HumanEdited,
        editor: req.editor,
        timestamp: req.timestamp.unwrap_or_else(now),
        annotation_sha256: Some(sha256_hex(json.as_bytes())),
    };
    append_review(&mut e, &id, ev)?;
    e.asset = asset;
    e.version += 1;
    let out = SelectionResponse {
        version: e.version,
        constraint,
        review: e.review.clone(),
    };
    Ok(json_response(StatusCode::OK, canonical_json(&out)))
}

async fn post_review(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: axum::body::Bytes,
) -> Result<Response, ServiceError> {
    let req: ReviewRequest = parse_body(&body)?;
    let entry = state.entry(&id)?;
    let mut e = entry.write().await;
    check_version(&e, req.version)?;
    let timestamp = req.timestamp.unwrap_or_else(now);
    let sha = Some(sha256_hex(asset_json(&e.asset).as_bytes()));
    let steps: &[ReviewStatus] = match req.decision {
        Decision::Approve => &[ReviewStatus::HumanApproved],
        // A rejected annotation goes straight back to the queue for a new query.
        Decision::Reject => &[ReviewStatus::Rejected, ReviewStatus::Pending],
    };
    let mut status = e.review.status;
    for &to in steps {
        if !status.can_move_to(to) {
            return Err(ServiceError::Conflict(format!("cannot move review from {status:?} to {to:?}")));
        }
        status = to;
    }
    for &to in steps {
        let ev = ReviewEvent {
            asset_id: id.clone(),
            to,
            editor: req.editor.clone(),
            timestamp: timestamp.clone(),
            annotation_sha256: sha.clone(),
        };
        append_review(&mut e, &id, ev)?;
    }
    e.version += 1;
    let out = ReviewResponse {
        version: e.version,
        review: e.review.clone(),
    };
    Ok(json_response(StatusCode::OK, canonical_json(&out)))
}

/// Writes the articulated fixtures under `root`, each with its review at
/// `vlm_done`, ready for selection and approval. Returns the asset ids.
pub fn seed_fixture_root(root: &Path) -> Result<Vec<String>, ServiceError> {
    let names = ["laptop", "drawer_cabinet", "door_cabinet", "shower", "cabinet_with_drawer"];
    let all = fixtures::all();
    for name in names {
        let asset = &all.iter().find(|(n, _)| *n == name).expect("known fixture").1;
        let dir = root.join(name);
        save_asset(asset, &dir).map_err(internal)?;
        let log_path = dir.join(REVIEW_LOG);
        if log_path.exists() {
            std::fs::remove_file(&log_path).map_err(internal)?;
        }
        ReviewLog::open(&log_path)
            .and_then(|mut log| {
                log.append(&ReviewEvent {
                    asset_id: name.to_string(),
                    to: ReviewStatus::VlmDone,
                    editor: "fixture".into(),
                    timestamp: "1970-01-01T00:00:00Z".into(),
                    annotation_sha256: None,
                })
                .map(|_| ())
            })
            .map_err(internal)?;
    }
    Ok(names.map(String::from).to_vec())
}
