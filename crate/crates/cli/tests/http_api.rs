mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use common::*;
use serde_json::{json, Value};
use strokeforge::config::PlanConfig;
use strokeforge::io::encode_png;
use strokeforge::pipeline::run_plan;
use strokeforge::plan_json::{parse_plan, serialize_plan};
use strokeforge::planning::{bitwise_eq, RefinerKind};
use strokeforge_cli::server::{router, ServiceOptions, MAX_BODY_BYTES};

fn app() -> axum::Router {
    router(ServiceOptions::default())
}

async fn finished_job(app: &axum::Router, image: &[u8], config: &Value) -> String {
    let (status, body) = submit(app, image, Some(&config.to_string())).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{body}");
    let id = body["id"].as_str().unwrap().to_string();
    let (record, _) = wait_done(app, &id).await;
    assert_eq!(record["state"], "done", "{record}");
    id
}

#[tokio::test]
async fn result_matches_library_output() {
    let app = app();
    let cfg = quick_config(7);
    let id = finished_job(&app, &scene_png(40, 32), &cfg).await;

    let expected = run_plan(&scene(40, 32), &PlanConfig::from_value(cfg).unwrap()).unwrap();
    let (s, png) = get(&app, &format!("/api/jobs/{id}/result.png")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(png, encode_png(&expected.image).unwrap());
    let (s, strokes) = get(&app, &format!("/api/jobs/{id}/strokes")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(String::from_utf8(strokes).unwrap(), serialize_plan(&expected.plan));
}

#[tokio::test]
async fn record_exposes_config_and_report() {
    let app = app();
    let id = finished_job(&app, &scene_png(24, 24), &quick_config(3)).await;
    let (_, record) = get_json(&app, &format!("/api/jobs/{id}")).await;
    assert_eq!(record["id"], id.as_str());
    assert_eq!(record["config"]["seed"], 3);
    assert_eq!(record["config"]["hybrid"]["stroke_budget"], 200);
    assert!(record["error"].is_null());
    assert!(record["parent"].is_null());
    let report = &record["result"]["report"];
    assert!(report["strokes"].as_u64().unwrap() > 0);
    assert_eq!(record["result"]["image"], format!("/api/jobs/{id}/result.png"));
}

#[tokio::test]
async fn states_only_move_forward() {
    let app = app();
    let (_, body) = submit(&app, &scene_png(32, 32), Some(&quick_config(1).to_string())).await;
    let (_, states) = wait_done(&app, body["id"].as_str().unwrap()).await;
    let order = ["queued", "running", "done"];
    let ranks: Vec<usize> = states.iter().map(|s| order.iter().position(|o| o == s).unwrap()).collect();
    assert!(ranks.windows(2).all(|w| w[0] < w[1]), "{states:?}");
    assert_eq!(states.last().unwrap(), "done");
}

#[tokio::test]
async fn replan_to_gamma_zero_is_heuristic_plan() {
    let app = app();
    let mut cfg = quick_config(11);
    cfg["refiner"] = json!("local_search");
    let id = finished_job(&app, &scene_png(32, 24), &cfg).await;

    let (s, body) = replan(&app, &id, r#"{"hybrid":{"blend_gamma":0.0}}"#).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let new_id = body["id"].as_str().unwrap();
    let (record, _) = wait_done(&app, new_id).await;
    assert_eq!(record["features_reused"], true);
    assert_eq!(record["parent"], id.as_str());
    let (_, strokes) = get(&app, &format!("/api/jobs/{new_id}/strokes")).await;
    let served = parse_plan(std::str::from_utf8(&strokes).unwrap()).unwrap();

    let mut heuristic = PlanConfig::from_value(cfg).unwrap();
    heuristic.refiner = RefinerKind::Identity;
    let expected = run_plan(&scene(32, 24), &heuristic).unwrap().plan;
    assert_eq!(served.strokes.len(), expected.strokes.len());
    for (a, b) in served.strokes.iter().zip(&expected.strokes) {
        assert!(bitwise_eq(a, b), "{a:?} vs {b:?}");
    }
}

#[tokio::test]
async fn replan_unchanged_is_byte_identical() {
    let app = app();
    let id = finished_job(&app, &scene_png(28, 28), &quick_config(5)).await;
    let (_, body) = replan(&app, &id, "{}").await;
    let new_id = body["id"].as_str().unwrap().to_string();
    wait_done(&app, &new_id).await;
    for suffix in ["result.png", "strokes"] {
        let (_, a) = get(&app, &format!("/api/jobs/{id}/{suffix}")).await;
        let (_, b) = get(&app, &format!("/api/jobs/{new_id}/{suffix}")).await;
        assert_eq!(a, b, "{suffix}");
    }
}

#[tokio::test]
async fn feature_change_forces_full_rerun() {
    let app = app();
    let id = finished_job(&app, &scene_png(24, 24), &quick_config(5)).await;
    let (_, body) = replan(&app, &id, r#"{"features":{"edge_threshold":0.3}}"#).await;
    let (record, _) = wait_done(&app, body["id"].as_str().unwrap()).await;
    assert_eq!(record["features_reused"], false);
    let (_, body) = replan(&app, &id, r#"{"seed":6}"#).await;
    let (record, _) = wait_done(&app, body["id"].as_str().unwrap()).await;
    assert_eq!(record["features_reused"], false);
}

#[tokio::test]
async fn invalid_patch_is_422_with_pointer() {
    let app = app();
    let id = finished_job(&app, &scene_png(16, 16), &quick_config(1)).await;
    let (s, body) = replan(&app, &id, r#"{"hybrid":{"blend_gamma":1.5}}"#).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "invalid_config");
    assert_eq!(body["pointer"], "/hybrid/blend_gamma");
    let (s, body) = replan(&app, &id, r#"{"hybrid":{"nope":1}}"#).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["pointer"], "/hybrid/nope");
    let (s, body) = replan(&app, &id, "[1,2]").await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    let (s, body) = replan(&app, &id, "{not json").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "bad_request");
}

#[tokio::test]
async fn invalid_submissions() {
    let app = app();
    let (s, body) = submit(&app, &scene_png(16, 16), Some(r#"{"render":{"bogus":true}}"#)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["pointer"], "/render/bogus");
    let (s, body) = submit(&app, b"not an image", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "invalid_image");
    let req = Request::post("/api/jobs")
        .header("content-type", "application/json")
        .body(Body::from("{}"))
        .unwrap();
    let (s, _) = send(&app, req).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_ids_are_404() {
    let app = app();
    for uri in ["/api/jobs/nope", "/api/jobs/nope/result.png", "/api/jobs/nope/strokes", "/api/elsewhere"] {
        let (s, body) = get_json(&app, uri).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(body["code"], "not_found");
        assert!(body["message"].is_string());
    }
    let (s, body) = replan(&app, "nope", "{}").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "not_found");
    let req = Request::delete("/api/jobs/nope").body(Body::empty()).unwrap();
    assert_eq!(send(&app, req).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn delete_removes_job() {
    let app = app();
    let id = finished_job(&app, &scene_png(16, 16), &quick_config(2)).await;
    let req = Request::delete(format!("/api/jobs/{id}")).body(Body::empty()).unwrap();
    assert_eq!(send(&app, req).await.0, StatusCode::NO_CONTENT);
    assert_eq!(get(&app, &format!("/api/jobs/{id}")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn oversized_payloads_are_413() {
    let app = app();
    let big = vec![b' '; MAX_BODY_BYTES + 1];
    let declared = Request::post("/api/jobs/any/replan")
        .header("content-length", big.len().to_string())
        .body(Body::from(big.clone()))
        .unwrap();
    let (s, body) = send(&app, declared).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
    let body: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(body["code"], "payload_too_large");

    let id = finished_job(&app, &scene_png(16, 16), &quick_config(2)).await;
    let undeclared = Request::post(format!("/api/jobs/{id}/replan"))
        .body(Body::from(big.clone()))
        .unwrap();
    let (s, body) = send(&app, undeclared).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap()["code"], "payload_too_large");

    let (ctype, multipart) = multipart_body(&big, None);
    let req = Request::post("/api/jobs")
        .header("content-type", ctype)
        .body(Body::from(multipart))
        .unwrap();
    let (s, body) = send(&app, req).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap()["code"], "payload_too_large");
}

#[tokio::test]
async fn cors_headers_present() {
    let app = app();
    let req = Request::get("/api/jobs/x")
        .header("origin", "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = tower::ServiceExt::oneshot(app.clone(), req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");

    let restricted = router(ServiceOptions::new(1, Some("http://studio.local")).unwrap());
    let preflight = Request::options("/api/jobs")
        .header("origin", "http://studio.local")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = tower::ServiceExt::oneshot(restricted, preflight).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "http://studio.local");
}

#[tokio::test]
async fn job_table_evicts_least_recent() {
    let app = app();
    let png = scene_png(16, 16);
    let cfg = json!({"features": {"candidate_count": 8}}).to_string();
    let (_, first) = submit(&app, &png, Some(&cfg)).await;
    let first = first["id"].as_str().unwrap().to_string();
    for _ in 0..strokeforge_cli::server::JOB_CAPACITY {
        let (s, _) = submit(&app, &png, Some(&cfg)).await;
        assert_eq!(s, StatusCode::ACCEPTED);
    }
    assert_eq!(get(&app, &format!("/api/jobs/{first}")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn real_socket_round_trip() {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(strokeforge_cli::server::serve(listener, ServiceOptions::default()));
    let base = format!("http://{addr}");
    let client = reqwest::Client::new();

    let form = reqwest::multipart::Form::new()
        .part("image", reqwest::multipart::Part::bytes(scene_png(20, 20)).file_name("in.png"))
        .text("config", quick_config(9).to_string());
    let resp = client.post(format!("{base}/api/jobs")).multipart(form).send().await.unwrap();
    assert_eq!(resp.status(), 202);
    let id = resp.json::<Value>().await.unwrap()["id"].as_str().unwrap().to_string();
    let mut state = String::new();
    for _ in 0..2000 {
        let record: Value = client.get(format!("{base}/api/jobs/{id}")).send().await.unwrap().json().await.unwrap();
        state = record["state"].as_str().unwrap().to_string();
        if state == "done" || state == "failed" {
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(10)).await;
    }
    assert_eq!(state, "done");
    let png = client.get(format!("{base}/api/jobs/{id}/result.png")).send().await.unwrap();
    assert_eq!(png.headers()["content-type"], "image/png");
    let expected = run_plan(&scene(20, 20), &PlanConfig::from_value(quick_config(9)).unwrap()).unwrap();
    assert_eq!(png.bytes().await.unwrap().to_vec(), encode_png(&expected.image).unwrap());
}
