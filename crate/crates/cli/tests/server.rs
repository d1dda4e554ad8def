use std::path::Path;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use tower::ServiceExt;

use rigforge_cli::server::{router, MeshResponse, ModelResponse, SkeletonResponse, SkinResponse};
use rigforge_core::rig::{Models, RunConfig};

fn app() -> Router {
    let cfg = RunConfig { width_scale: 0.0625, voxel_resolution: 32, ..RunConfig::default() };
    router(Models::init(&cfg).unwrap())
}

fn obj(name: &str) -> Vec<u8> {
    std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets").join(name)).unwrap()
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn upload(app: &Router, body: Vec<u8>) -> (StatusCode, Vec<u8>) {
    send(app, Request::post("/model").body(Body::from(body)).unwrap()).await
}

async fn skeleton(app: &Router, body: serde_json::Value) -> (StatusCode, Vec<u8>) {
    let req = Request::post("/skeleton").header("content-type", "application/json").body(Body::from(body.to_string())).unwrap();
    send(app, req).await
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

fn error_text(body: &[u8]) -> String {
    let v: serde_json::Value = serde_json::from_slice(body).unwrap();
    v["error"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn model_skeleton_skin_mesh_flow() {
    let app = app();
    let (status, body) = upload(&app, obj("bird.obj")).await;
    assert_eq!(status, StatusCode::OK);
    let model: ModelResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(model.vertex_count, 1214);
    assert_eq!(model.bandwidth_range, [0.01, 0.1]);
    assert!((0.01..=0.1).contains(&model.learned_bandwidth));
    let id = model.model_id;

    let (status, body) = get(&app, &format!("/skin/{id}")).await;
    assert_eq!(status, StatusCode::CONFLICT, "{}", error_text(&body));

    let (status, body) = get(&app, &format!("/mesh/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    let mesh: MeshResponse = serde_json::from_slice(&body).unwrap();
    let original = rigforge_core::mesh::Mesh::from_obj(&obj("bird.obj")).unwrap();
    assert_eq!(mesh.vertices.len(), original.vertex_count());
    assert_eq!(mesh.triangles, original.triangles());
    for (a, b) in mesh.vertices.iter().zip(original.vertices()) {
        assert!((a[0] - b.x).abs() + (a[1] - b.y).abs() + (a[2] - b.z).abs() < 1e-9);
    }

    let (status, first) = skeleton(&app, serde_json::json!({ "model_id": id, "bandwidth": 0.05 })).await;
    assert_eq!(status, StatusCode::OK, "{}", error_text(&first));
    let (_, second) = skeleton(&app, serde_json::json!({ "model_id": id, "bandwidth": 0.05 })).await;
    assert_eq!(first, second);
    let sk: SkeletonResponse = serde_json::from_slice(&first).unwrap();
    assert!(sk.joints.len() >= 2);
    assert_eq!(sk.bones.len(), sk.joints.len() - 1);
    assert_eq!(sk.bandwidth, 0.05);
    assert!(sk.root < sk.joints.len());
    assert!(sk.bones.iter().all(|b| b[1] != sk.root));

    let (status, body) = get(&app, &format!("/skin/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    let skin: SkinResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(skin.bones, sk.bones);
    assert_eq!(skin.weights.len(), 1214);
    for row in &skin.weights {
        assert_eq!(row.len(), sk.bones.len());
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|w| *w >= 0.0));
    }

    let (status, body) = skeleton(&app, serde_json::json!({ "model_id": id })).await;
    assert_eq!(status, StatusCode::OK);
    let learned: SkeletonResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(learned.bandwidth, model.learned_bandwidth);
}

#[tokio::test]
async fn error_statuses() {
    let app = app();
    let (status, body) = upload(&app, obj("robot.obj")).await;
    assert_eq!(status, StatusCode::OK);
    let id = serde_json::from_slice::<ModelResponse>(&body).unwrap().model_id;

    let (status, body) = skeleton(&app, serde_json::json!({ "model_id": id, "bandwidth": 0.5 })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(error_text(&body).contains("[0.01, 0.1]"));
    let (status, _) = skeleton(&app, serde_json::json!({ "model_id": id, "bandwidth": 0.0 })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, _) = skeleton(&app, serde_json::json!({ "model_id": 999, "bandwidth": 0.05 })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/skin/999").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/mesh/999").await.0, StatusCode::NOT_FOUND);

    let (status, _) = upload(&app, b"v 0 0 0\nf 1 2 3\n".to_vec()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = upload(&app, Vec::new()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn new_skeleton_replaces_cached_skin() {
    let app = app();
    let (_, body) = upload(&app, obj("humanoid.obj")).await;
    let id = serde_json::from_slice::<ModelResponse>(&body).unwrap().model_id;
    let mut bone_sets = Vec::new();
    for h in [0.03, 0.09] {
        let (status, body) = skeleton(&app, serde_json::json!({ "model_id": id, "bandwidth": h })).await;
        assert_eq!(status, StatusCode::OK);
        let sk: SkeletonResponse = serde_json::from_slice(&body).unwrap();
        let (_, body) = get(&app, &format!("/skin/{id}")).await;
        let skin: SkinResponse = serde_json::from_slice(&body).unwrap();
        assert_eq!(skin.bones, sk.bones);
        assert!(skin.weights.iter().all(|r| r.len() == sk.bones.len()));
        bone_sets.push(sk.bones);
    }
}

#[tokio::test]
async fn identical_request_sequences_match_across_servers() {
    let mut transcripts = Vec::new();
    for _ in 0..2 {
        let app = app();
        let mut log = Vec::new();
        let (_, body) = upload(&app, obj("spider.obj")).await;
        log.push(body.clone());
        let id = serde_json::from_slice::<ModelResponse>(&body).unwrap().model_id;
        for h in [0.08, 0.04] {
            log.push(skeleton(&app, serde_json::json!({ "model_id": id, "bandwidth": h })).await.1);
        }
        log.push(get(&app, &format!("/skin/{id}")).await.1);
        transcripts.push(log);
    }
    assert_eq!(transcripts[0], transcripts[1]);
}

#[tokio::test]
async fn bandwidth_sweep_uses_cached_path() {
    let ckpt = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets/ckpt");
    let app = router(Models::load(&ckpt).unwrap());
    for name in ["humanoid", "quadruped", "bird", "robot", "spider"] {
        let (_, body) = upload(&app, obj(&format!("{name}.obj"))).await;
        let id = serde_json::from_slice::<ModelResponse>(&body).unwrap().model_id;
        let mut counts = Vec::new();
        for k in 0..=9 {
            let h = 0.01 + 0.01 * k as f64;
            let start = Instant::now();
            let (status, body) = skeleton(&app, serde_json::json!({ "model_id": id, "bandwidth": h })).await;
            let elapsed = start.elapsed();
            assert_eq!(status, StatusCode::OK, "{name} h={h}: {}", error_text(&body));
            assert!(elapsed < Duration::from_secs(2), "{name} h={h} took {elapsed:?}");
            counts.push(serde_json::from_slice::<SkeletonResponse>(&body).unwrap().joints.len());
        }
        eprintln!("{name} joint counts over the sweep: {counts:?}");
        assert!(counts.iter().all(|&c| c >= 2));
    }
}
