#![allow(dead_code)]

use std::path::Path;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::Value;
use strokeforge::io::encode_png;
use strokeforge::raster::RasterImage;
use tower::ServiceExt;

/// A disc on a diagonal ramp: edges, a salient blob and smooth areas.
/// Quantized to 8 bits so it equals its own PNG decoding.
pub fn scene(w: usize, h: usize) -> RasterImage {
    let exact = RasterImage::from_fn(w, h, 3, |x, y, c| {
        let (cx, cy) = (w as f64 * 0.6, h as f64 * 0.45);
        let r = (w.min(h) as f64) * 0.25;
        let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
        let ramp = (x + y) as f64 / (w + h) as f64;
        let inside = if d < r { 1.0 } else { 0.0 };
        match c {
            0 => 0.2 + 0.6 * inside,
            1 => 0.3 + 0.5 * ramp,
            _ => 0.8 - 0.6 * inside * ramp,
        }
    })
    .unwrap();
    RasterImage::from_u8(w, h, 3, &exact.to_u8()).unwrap()
}

pub fn scene_png(w: usize, h: usize) -> Vec<u8> {
    encode_png(&scene(w, h)).unwrap()
}

pub fn write_scene(path: &Path, w: usize, h: usize) {
    std::fs::write(path, scene_png(w, h)).unwrap();
}

/// A config small enough for fast test runs.
pub fn quick_config(seed: u64) -> Value {
    serde_json::json!({
        "seed": seed,
        "features": {"candidate_count": 300},
        "hybrid": {"stroke_budget": 200}
    })
}

pub fn multipart_body(image: &[u8], config: Option<&str>) -> (String, Vec<u8>) {
    let boundary = "strokeforge-test-boundary";
    let mut body = Vec::new();
    body.extend_from_slice(
        format!(
            "--{boundary}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"in.png\"\r\nContent-Type: image/png\r\n\r\n"
        )
        .as_bytes(),
    );
    body.extend_from_slice(image);
    body.extend_from_slice(b"\r\n");
    if let Some(cfg) = config {
        body.extend_from_slice(
            format!("--{boundary}\r\nContent-Disposition: form-data; name=\"config\"\r\n\r\n{cfg}\r\n").as_bytes(),
        );
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={boundary}"), body)
}

pub async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec())
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = get(app, uri).await;
    (s, serde_json::from_slice(&b).unwrap())
}

pub async fn submit(app: &Router, image: &[u8], config: Option<&str>) -> (StatusCode, Value) {
    let (ctype, body) = multipart_body(image, config);
    let req = Request::post("/api/jobs")
        .header("content-type", ctype)
        .body(Body::from(body))
        .unwrap();
    let (s, b) = send(app, req).await;
    (s, serde_json::from_slice(&b).unwrap())
}

pub async fn replan(app: &Router, id: &str, patch: &str) -> (StatusCode, Value) {
    let req = Request::post(format!("/api/jobs/{id}/replan"))
        .header("content-type", "application/json")
        .body(Body::from(patch.to_string()))
        .unwrap();
    let (s, b) = send(app, req).await;
    (s, serde_json::from_slice(&b).unwrap())
}

/// Polls until the job leaves the queue, returning every state observed.
pub async fn wait_done(app: &Router, id: &str) -> (Value, Vec<String>) {
    let mut seen: Vec<String> = Vec::new();
    for _ in 0..6000 {
        let (status, record) = get_json(app, &format!("/api/jobs/{id}")).await;
        assert_eq!(status, StatusCode::OK, "{record}");
        let state = record["state"].as_str().unwrap().to_string();
        if seen.last() != Some(&state) {
            seen.push(state.clone());
        }
        if state == "done" || state == "failed" {
            return (record, seen);
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("job {id} did not finish; states {seen:?}");
}
