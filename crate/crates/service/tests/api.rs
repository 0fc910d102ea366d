use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use physasset::annotate::{ReviewLog, ReviewStatus};
use physasset::asset::{asset_json, load_asset, KinematicKind};
use physasset::kinematics::{candidates_for_pair, review_candidates, AxisCandidate, KinematicsConfig};
use physasset::{canonical_json, fixtures};
use physasset_service::{router, seed_fixture_root, AppState, AssetSummary, SelectionResponse, REVIEW_LOG, VERSION_HEADER};
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

fn config() -> KinematicsConfig {
    KinematicsConfig {
        samples: 4000,
        ..Default::default()
    }
}

fn setup() -> (TempDir, AppState, Router) {
    let dir = tempfile::tempdir().unwrap();
    seed_fixture_root(dir.path()).unwrap();
    let state = AppState::open(dir.path(), config()).unwrap();
    let app = router(state.clone());
    (dir, state, app)
}

struct Reply {
    status: StatusCode,
    version: Option<u64>,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap()
    }
    fn text(&self) -> String {
        String::from_utf8(self.body.clone()).unwrap()
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> Reply {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let version = res
        .headers()
        .get(VERSION_HEADER)
        .map(|v| v.to_str().unwrap().parse().unwrap());
    let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, version, body }
}

#[tokio::test]
async fn lists_seeded_assets_with_review_state() {
    let (_dir, _, app) = setup();
    let r = call(&app, "GET", "/assets", None).await;
    assert_eq!(r.status, StatusCode::OK);
    let list: Vec<AssetSummary> = serde_json::from_slice(&r.body).unwrap();
    let ids: Vec<&str> = list.iter().map(|a| a.id.as_str()).collect();
    assert_eq!(ids, ["cabinet_with_drawer", "door_cabinet", "drawer_cabinet", "laptop", "shower"]);
    assert!(list.iter().all(|a| a.review.status == ReviewStatus::VlmDone && a.version == 0));
}

#[tokio::test]
async fn asset_and_mesh_match_library_serialization() {
    let (dir, _, app) = setup();
    let on_disk = load_asset(&dir.path().join("laptop")).unwrap();
    let r = call(&app, "GET", "/assets/laptop", None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.version, Some(0));
    assert_eq!(r.text(), asset_json(&on_disk));

    let r = call(&app, "GET", "/assets/laptop/mesh/2", None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body, on_disk.part(2).unwrap().mesh.to_binary());
    let n_vertices = u32::from_le_bytes(r.body[..4].try_into().unwrap()) as usize;
    let n_faces = u32::from_le_bytes(r.body[4..8].try_into().unwrap()) as usize;
    assert_eq!(r.body.len(), 8 + 12 * n_vertices + 12 * n_faces);
}

#[tokio::test]
async fn unknown_asset_or_part_is_404() {
    let (_dir, _, app) = setup();
    for uri in [
        "/assets/nope",
        "/assets/nope/mesh/1",
        "/assets/laptop/mesh/9",
        "/assets/laptop/candidates/9/1?kind=C",
    ] {
        let r = call(&app, "GET", uri, None).await;
        assert_eq!(r.status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(r.json()["error"], "not_found");
    }
}

#[tokio::test]
async fn candidates_equal_library_output_and_are_cached() {
    let (dir, state, app) = setup();
    let asset = load_asset(&dir.path().join("laptop")).unwrap();
    let gt = fixtures::laptop().constraints[0].clone();
    let (child, parent) = (gt.child_part.unwrap(), gt.parent_part.unwrap());
    let uri = format!("/assets/laptop/candidates/{child}/{parent}");

    let r = call(&app, "GET", &uri, None).await;
    assert_eq!(r.status, StatusCode::OK);
    let expected = review_candidates(&asset, child, parent, KinematicKind::C, &config()).unwrap();
    assert_eq!(r.text(), canonical_json(&expected));
    let scored = candidates_for_pair(&asset, child, parent, KinematicKind::C, &config()).unwrap().3;
    let served: Vec<AxisCandidate> = serde_json::from_slice(&r.body).unwrap();
    assert_eq!(served[0], scored[0]);
    assert_eq!(state.cached_candidates(), 1);

    let again = call(&app, "GET", &format!("{uri}?kind=C"), None).await;
    assert_eq!(again.body, r.body);
    assert_eq!(state.cached_candidates(), 1);

    let other_kind = call(&app, "GET", &format!("{uri}?kind=B"), None).await;
    assert_eq!(other_kind.status, StatusCode::OK);
    assert_eq!(state.cached_candidates(), 2);
}

#[tokio::test]
async fn pair_without_joint_needs_a_kind() {
    let (_dir, _, app) = setup();
    let r = call(&app, "GET", "/assets/laptop/candidates/1/2", None).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn selecting_top_hinge_candidate_finalizes_joint() {
    let (dir, _, app) = setup();
    let r = call(&app, "GET", "/assets/laptop/candidates/2/1", None).await;
    let top: AxisCandidate = serde_json::from_slice::<Vec<AxisCandidate>>(&r.body).unwrap().remove(0);
    let body = json!({
        "version": 0,
        "editor": "alice",
        "timestamp": "2024-05-01T10:00:00Z",
        "candidate": {"kind": "C", "child": 2, "parent": 1, "candidate": top}
    });
    let r = call(&app, "POST", "/assets/laptop/selection", Some(body)).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let sel: SelectionResponse = serde_json::from_slice(&r.body).unwrap();
    assert_eq!(sel.version, 1);
    assert_eq!(sel.review.status, ReviewStatus::HumanEdited);

    let r = call(&app, "GET", "/assets/laptop", None).await;
    assert_eq!(r.version, Some(1));
    let c = &r.json()["constraints"][0];
    assert_eq!(c["kind"], "C");
    assert_eq!(c["finalized"], true);
    assert_eq!(c["direction"], json!(top.direction));
    assert_eq!(c["pivot"], json!(top.pivot));

    let log = ReviewLog::replay(&dir.path().join("laptop").join(REVIEW_LOG)).unwrap();
    assert_eq!(log, sel.review);
    assert_eq!(asset_json(&load_asset(&dir.path().join("laptop")).unwrap()), r.text());
}

#[tokio::test]
async fn non_unit_direction_is_422() {
    let (_dir, _, app) = setup();
    let body = json!({
        "version": 0,
        "editor": "alice",
        "constraint": {
            "kind": "C", "parent_part": 1, "child_part": 2,
            "direction": [0.0, 2.0, 0.0], "pivot": [0.0, 0.0, 0.0], "range": [0.0, 1.0], "finalized": true
        }
    });
    let r = call(&app, "POST", "/assets/laptop/selection", Some(body)).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(r.json()["details"][0].as_str().unwrap().contains("direction"));
    let r = call(&app, "GET", "/assets/laptop", None).await;
    assert_eq!(r.version, Some(0));
}

#[tokio::test]
async fn malformed_or_ambiguous_bodies_are_422() {
    let (_dir, _, app) = setup();
    for body in [json!({"version": 0}), json!({"version": 0, "editor": "a"})] {
        let r = call(&app, "POST", "/assets/laptop/selection", Some(body)).await;
        assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    }
    let r = call(&app, "POST", "/assets/laptop/review", Some(json!({"version": 0, "editor": "a", "decision": "maybe"}))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn stale_version_is_409() {
    let (_dir, _, app) = setup();
    let approve = |v: u64| json!({"version": v, "editor": "bob", "decision": "approve"});
    let r = call(&app, "POST", "/assets/door_cabinet/review", Some(approve(3))).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.json()["current_version"], 0);
    let r = call(&app, "POST", "/assets/door_cabinet/review", Some(approve(0))).await;
    assert_eq!(r.status, StatusCode::OK);
    let r = call(&app, "POST", "/assets/door_cabinet/review", Some(approve(0))).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.json()["error"], "stale_version");
}

#[tokio::test]
async fn concurrent_writers_one_wins() {
    let (_dir, _, app) = setup();
    let approve = json!({"version": 0, "editor": "a", "decision": "approve"});
    let reject = json!({"version": 0, "editor": "b", "decision": "reject"});
    let (a, b) = tokio::join!(
        call(&app, "POST", "/assets/shower/review", Some(approve)),
        call(&app, "POST", "/assets/shower/review", Some(reject))
    );
    let mut codes = [a.status, b.status];
    codes.sort();
    assert_eq!(codes, [StatusCode::OK, StatusCode::CONFLICT]);
}

#[tokio::test]
async fn approve_then_list_shows_human_approved() {
    let (_dir, _, app) = setup();
    let r = call(&app, "POST", "/assets/drawer_cabinet/review", Some(json!({"version": 0, "editor": "bob", "decision": "approve"}))).await;
    assert_eq!(r.status, StatusCode::OK);
    let list: Vec<AssetSummary> = serde_json::from_slice(&call(&app, "GET", "/assets", None).await.body).unwrap();
    let drawer = list.iter().find(|a| a.id == "drawer_cabinet").unwrap();
    assert_eq!(drawer.review.status, ReviewStatus::HumanApproved);
    assert_eq!(drawer.review.editor, "bob");
    assert_eq!(drawer.version, 1);

    // Approval is final for the review decision itself.
    let r = call(&app, "POST", "/assets/drawer_cabinet/review", Some(json!({"version": 1, "editor": "bob", "decision": "reject"}))).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn reject_returns_to_pending_and_blocks_selection() {
    let (dir, _, app) = setup();
    let r = call(&app, "POST", "/assets/laptop/review", Some(json!({"version": 0, "editor": "bob", "decision": "reject"}))).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["review"]["status"], "pending");
    let log = std::fs::read_to_string(dir.path().join("laptop").join(REVIEW_LOG)).unwrap();
    assert_eq!(log.lines().count(), 3);

    let body = json!({
        "version": 1,
        "editor": "alice",
        "constraint": {
            "kind": "C", "parent_part": 1, "child_part": 2,
            "direction": [0.0, 1.0, 0.0], "pivot": [0.0, 0.0, 0.0], "range": [0.0, 1.0], "finalized": true
        }
    });
    let r = call(&app, "POST", "/assets/laptop/selection", Some(body)).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn manual_prismatic_edit_after_approval() {
    let (_dir, _, app) = setup();
    call(&app, "POST", "/assets/drawer_cabinet/review", Some(json!({"version": 0, "editor": "bob", "decision": "approve"}))).await;
    let gt = fixtures::drawer_cabinet().constraints[0].clone();
    let mut edited = serde_json::to_value(&gt).unwrap();
    edited["range"] = json!([-0.5, 0.0]);
    let r = call(&app, "POST", "/assets/drawer_cabinet/selection", Some(json!({"version": 1, "editor": "alice", "constraint": edited}))).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let asset = call(&app, "GET", "/assets/drawer_cabinet", None).await.json();
    assert_eq!(asset["constraints"].as_array().unwrap().len(), 1);
    assert_eq!(asset["constraints"][0]["range"], json!([-0.5, 0.0]));
    let list: Vec<AssetSummary> = serde_json::from_slice(&call(&app, "GET", "/assets", None).await.body).unwrap();
    let drawer = list.iter().find(|a| a.id == "drawer_cabinet").unwrap();
    assert_eq!(drawer.review.status, ReviewStatus::HumanEdited);
}
