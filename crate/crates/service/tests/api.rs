use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use image::{GrayImage, Luma};
use ndarray::Array2;
use serde_json::{json, Value};
use tower::ServiceExt;

use mousemap::embed::umap::write_model;
use mousemap::embed::{EmbeddingModel, UmapParams};
use mousemap::explore::{query_region, LabelStore, Region};
use mousemap::windows::{write_dataset, WindowDataset, WindowProvenance};
use mousemap_service::{router, Session, SessionConfig};

/// A 4-point model over a 2-frame window dataset, with frames for video "v".
fn fixture(root: &Path, frames: bool) -> SessionConfig {
    let index: Vec<WindowProvenance> = [("v", 0), ("v", 1), ("w", 0), ("w", 5)]
        .iter()
        .map(|(v, s)| WindowProvenance { video_id: v.to_string(), start_frame: *s })
        .collect();
    let ds = WindowDataset {
        matrix: Array2::zeros((4, 4)),
        index: index.clone(),
        omega: 2,
        stride: 1,
        bodyparts: vec!["snout".into()],
    };
    write_dataset(&root.join("windows"), &ds).unwrap();
    let model = EmbeddingModel {
        coords: ndarray::array![[0.0f32, 0.0], [1.0, 1.0], [5.0, 5.0], [5.5, 4.5]],
        a: 1.9,
        b: 0.8,
        params: UmapParams::default(),
        index,
        training: None,
        windows: Some("../windows".into()),
    };
    write_model(&root.join("embedding"), &model).unwrap();
    if frames {
        let dir = root.join("frames/v");
        std::fs::create_dir_all(&dir).unwrap();
        for t in 0..3u32 {
            let img = GrayImage::from_fn(32, 24, |x, _| Luma([if x < 10 + 4 * t { 20 } else { 230 }]));
            img.save(dir.join(format!("{t:06}.png"))).unwrap();
        }
    }
    SessionConfig {
        model: root.join("embedding"),
        labels: root.join("labels.json"),
        frames: frames.then(|| root.join("frames")),
        ui: None,
    }
}

fn app(config: &SessionConfig) -> Router {
    router(Arc::new(Session::load(config).unwrap()))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req.header("content-type", "application/json").body(Body::from(v.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call_json(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    (status, if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() })
}

#[tokio::test]
async fn embedding_lists_every_point() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&fixture(dir.path(), false));
    let (status, body) = call_json(&app, Method::GET, "/api/embedding", None).await;
    assert_eq!(status, StatusCode::OK);
    let points = body.as_array().unwrap();
    assert_eq!(points.len(), 4);
    assert_eq!(points[3], json!({"id": 3, "x": 5.5, "y": 4.5, "video": "w", "start": 5}));
    let (_, meta) = call_json(&app, Method::GET, "/api/meta", None).await;
    assert_eq!(meta["n"], 4);
    assert_eq!(meta["omega"], 2);
    assert_eq!(meta["videos"], json!({"v": 2, "w": 2}));
}

#[tokio::test]
async fn query_matches_library_query() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path(), false);
    let app = app(&config);
    let model = mousemap::embed::umap::read_model(&config.model, false).unwrap();
    for (body, region) in [
        (json!({"rect": [-1.0, 1.5, -1.0, 1.5]}), Region::rect(-1.0, 1.5, -1.0, 1.5).unwrap()),
        (json!({"disc": [5.0, 5.0, 0.8]}), Region::disc(5.0, 5.0, 0.8).unwrap()),
    ] {
        let (status, got) = call_json(&app, Method::POST, "/api/query", Some(body)).await;
        assert_eq!(status, StatusCode::OK);
        let want = serde_json::to_value(query_region(&model.coords, &model.index, &region)).unwrap();
        assert_eq!(got, want);
    }
    let (_, got) = call_json(&app, Method::POST, "/api/query", Some(json!({"disc": [5.0, 5.0, 0.8]}))).await;
    assert_eq!(got["ids"], json!([2, 3]));
}

#[tokio::test]
async fn malformed_regions_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&fixture(dir.path(), false));
    for bad in [json!({"rect": [1.0, 0.0, 0.0, 1.0]}), json!({"disc": [0.0, 0.0, -1.0]}), json!({"circle": [0, 0, 1]})] {
        let (status, body) = call_json(&app, Method::POST, "/api/query", Some(bad.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad}");
        assert!(body["error"].is_string());
        let label = json!({"region": bad, "text": "x"});
        let (status, _) = call_json(&app, Method::POST, "/api/labels", Some(label)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
    }
}

#[tokio::test]
async fn label_round_trip_and_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path(), false);
    let app = app(&config);
    let (status, created) = call_json(
        &app,
        Method::POST,
        "/api/labels",
        Some(json!({"region": {"disc": [5.0, 5.0, 1.0]}, "text": "grooming", "author": "ann"})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    let id = created["id"].as_u64().unwrap();
    let (_, label) = call_json(&app, Method::GET, &format!("/api/labels/{id}"), None).await;
    assert_eq!(label["text"], "grooming");
    assert_eq!(label["region"], json!({"disc": [5.0, 5.0, 1.0]}));

    let (status, _) =
        call_json(&app, Method::PATCH, &format!("/api/labels/{id}"), Some(json!({"text": "scratching"}))).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (_, list) = call_json(&app, Method::GET, "/api/labels", None).await;
    assert_eq!(list.as_array().unwrap().len(), 1);
    assert_eq!(list[0]["text"], "scratching");

    // A fresh session over the same files sees the same labels.
    let again = self::app(&config);
    let (_, reloaded) = call_json(&again, Method::GET, "/api/labels", None).await;
    assert_eq!(reloaded, list);
    let on_disk = LabelStore::open(&config.labels).unwrap();
    assert_eq!(serde_json::to_value(on_disk.list()).unwrap(), list);

    let before = std::fs::read(&config.labels).unwrap();
    let (status, _) = call_json(&app, Method::DELETE, "/api/labels/999", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(std::fs::read(&config.labels).unwrap(), before);
    let (status, _) = call_json(&app, Method::PATCH, "/api/labels/999", Some(json!({"text": "y"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, _) = call_json(&app, Method::DELETE, &format!("/api/labels/{id}"), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (_, list) = call_json(&app, Method::GET, "/api/labels", None).await;
    assert_eq!(list, json!([]));
    let (status, _) = call_json(&app, Method::GET, &format!("/api/labels/{id}"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_writers_serialize() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path(), false);
    let app = app(&config);
    let mut tasks = Vec::new();
    for w in 0..20 {
        let app = app.clone();
        tasks.push(tokio::spawn(async move {
            let body = json!({"region": {"rect": [0.0, 1.0, 0.0, 1.0]}, "text": format!("writer {w}")});
            let (status, created) = call_json(&app, Method::POST, "/api/labels", Some(body)).await;
            assert_eq!(status, StatusCode::CREATED);
            let id = created["id"].as_u64().unwrap();
            if w % 3 == 0 {
                let (status, _) = call_json(&app, Method::DELETE, &format!("/api/labels/{id}"), None).await;
                assert_eq!(status, StatusCode::NO_CONTENT);
            } else {
                let edit = json!({"text": format!("writer {w} edited")});
                let (status, _) = call_json(&app, Method::PATCH, &format!("/api/labels/{id}"), Some(edit)).await;
                assert_eq!(status, StatusCode::NO_CONTENT);
            }
            (w, id)
        }));
    }
    let mut ids = Vec::new();
    for t in tasks {
        ids.push(t.await.unwrap());
    }
    // Ids are distinct and dense, as in any sequential order of the creates.
    let mut sorted: Vec<u64> = ids.iter().map(|p| p.1).collect();
    sorted.sort();
    let first = sorted[0];
    assert_eq!(sorted, (first..first + 20).collect::<Vec<_>>());

    let (_, list) = call_json(&app, Method::GET, "/api/labels", None).await;
    let mut expected: Vec<(u64, String)> =
        ids.iter().filter(|(w, _)| w % 3 != 0).map(|(w, id)| (*id, format!("writer {w} edited"))).collect();
    expected.sort();
    let got: Vec<(u64, String)> = list
        .as_array()
        .unwrap()
        .iter()
        .map(|l| (l["id"].as_u64().unwrap(), l["text"].as_str().unwrap().to_string()))
        .collect();
    assert_eq!(got, expected);
    let on_disk = LabelStore::open(&config.labels).unwrap();
    assert_eq!(serde_json::to_value(on_disk.list()).unwrap(), list);
}

async fn wait_for_job(app: &Router, job: u64) -> Value {
    for _ in 0..500 {
        let (status, body) = call_json(app, Method::GET, &format!("/api/ensemble/{job}"), None).await;
        assert_eq!(status, StatusCode::OK);
        if body["status"] != "running" {
            return body;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("job {job} did not finish");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn ensemble_job_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&fixture(dir.path(), true));
    // Windows 0 and 1 (video v, frames 0-1 and 1-2).
    let (status, started) =
        call_json(&app, Method::POST, "/api/ensemble", Some(json!({"rect": [-1.0, 2.0, -1.0, 2.0], "low": 50, "high": 150})))
            .await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let job = started["job"].as_u64().unwrap();
    let done = wait_for_job(&app, job).await;
    assert_eq!(done["status"], "done", "{done}");
    assert_eq!(done["windows"], 2);
    assert_eq!(done["skipped"], 0);
    let frames = done["frames"].as_array().unwrap();
    assert_eq!(frames.len(), 2);
    let (status, png) = call(&app, Method::GET, frames[1].as_str().unwrap(), None).await;
    assert_eq!(status, StatusCode::OK);
    let img = image::load_from_memory(&png).unwrap().to_luma8();
    assert_eq!(img.dimensions(), (32, 24));
    let (status, _) = call(&app, Method::GET, &format!("/api/ensemble/{job}/frame/9"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // Only windows of video w, which has no frames: the job fails.
    let (_, started) = call_json(&app, Method::POST, "/api/ensemble", Some(json!({"disc": [5.0, 5.0, 1.0]}))).await;
    let failed = wait_for_job(&app, started["job"].as_u64().unwrap()).await;
    assert_eq!(failed["status"], "failed");
    assert!(failed["error"].is_string());

    let (status, _) =
        call_json(&app, Method::POST, "/api/ensemble", Some(json!({"disc": [5.0, 5.0, 1.0], "low": 9, "high": 1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call_json(&app, Method::GET, "/api/ensemble/424242", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn ensemble_needs_frames() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&fixture(dir.path(), false));
    let (status, _) = call_json(&app, Method::POST, "/api/ensemble", Some(json!({"disc": [0.0, 0.0, 1.0]}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn root_serves_placeholder_or_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = fixture(dir.path(), false);
    let (status, body) = call(&app(&config), Method::GET, "/", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8(body).unwrap().contains("/api/"));

    let ui = dir.path().join("ui");
    std::fs::create_dir_all(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<p>bundle</p>").unwrap();
    config.ui = Some(ui);
    let app = app(&config);
    let (status, body) = call(&app, Method::GET, "/", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<p>bundle</p>");
    let (status, _) = call_json(&app, Method::GET, "/api/meta", None).await;
    assert_eq!(status, StatusCode::OK);
}

#[test]
fn missing_model_fails_to_load() {
    let dir = tempfile::tempdir().unwrap();
    let config = SessionConfig { model: dir.path().join("nope"), labels: dir.path().join("l.json"), ..Default::default() };
    assert!(Session::load(&config).is_err());
}
