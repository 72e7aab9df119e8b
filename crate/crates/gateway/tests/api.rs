use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use ransim_core::live::{Pacing, SimHandle};
use ransim_core::presets::{self, RUSH_HOUR_SECTOR};
use ransim_core::Engine;
use ransim_gateway::{router, router_with, GatewayConfig};

fn sim() -> SimHandle {
    SimHandle::spawn(Engine::new(presets::hex_three_gnb(42)).unwrap(), Pacing::Manual)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

async fn raw(app: &Router, method: &str, uri: &str, body: &str) -> StatusCode {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body.to_string())).unwrap();
    app.clone().oneshot(req).await.unwrap().status()
}

/// Reads an SSE body until `done` is satisfied or the timeout passes.
async fn read_stream(app: &Router, req: Request<Body>, done: impl Fn(&str) -> bool) -> String {
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let mut body = resp.into_body();
    let mut text = String::new();
    let deadline = tokio::time::Instant::now() + Duration::from_secs(5);
    while !done(&text) {
        let frame = tokio::time::timeout_at(deadline, body.frame()).await;
        match frame {
            Ok(Some(Ok(f))) => {
                if let Ok(data) = f.into_data() {
                    text.push_str(std::str::from_utf8(&data).unwrap());
                }
            }
            _ => break,
        }
    }
    text
}

fn event_ids(text: &str) -> Vec<u64> {
    text.lines().filter_map(|l| l.strip_prefix("id: ")).map(|v| v.parse().unwrap()).collect()
}

#[tokio::test(flavor = "multi_thread")]
async fn reads_before_first_tick() {
    let h = sim();
    let app = router(h.clone());
    let (s, v) = call(&app, "GET", "/network", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["tick"], Value::Null);
    assert_eq!(v["network"]["sectors"].as_object().unwrap().len(), 54);
    let (_, v) = call(&app, "GET", "/loads", None).await;
    assert_eq!(v["loads"], Value::Null);
    h.advance(1);
    let (_, v) = call(&app, "GET", "/loads", None).await;
    assert_eq!(v["tick"], 0);
    assert_eq!(v["loads"]["per_sector"].as_object().unwrap().len(), 54);
    h.shutdown();
}

#[tokio::test(flavor = "multi_thread")]
async fn added_ue_is_visible_from_its_apply_tick() {
    let h = sim();
    let app = router(h.clone());
    h.advance(2);
    let (s, v) = call(&app, "POST", "/ues", Some(json!({"ue_id": "probe", "service_class": "video"}))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(v["apply_tick"], 2);
    assert_eq!(v["ue_id"], "probe");
    // last completed tick is 1 < 2: not visible yet
    assert_eq!(call(&app, "GET", "/ues/probe", None).await.0, StatusCode::NOT_FOUND);
    h.advance(1);
    let (s, v) = call(&app, "GET", "/ues/probe", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["tick"], 2);
    assert!(v["ue"]["sector_id"].is_string());
    assert_eq!(v["log"].as_array().unwrap().len(), 1);

    let (s, v) = call(&app, "POST", "/ues", Some(json!({"service_class": "iot"}))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert!(v["ue_id"].as_str().unwrap().starts_with("dyn"));
    let (s, _) = call(&app, "POST", "/ues", Some(json!({"ue_id": "probe", "service_class": "iot"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call(&app, "POST", "/ues", Some(json!({"service_class": "iot", "sector_id": "nowhere"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/ues", Some(json!({"service_class": "telepathy"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    h.shutdown();
}

#[tokio::test(flavor = "multi_thread")]
async fn delete_and_traffic() {
    let h = sim();
    let app = router(h.clone());
    assert_eq!(call(&app, "DELETE", "/ues/ghost", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "POST", "/ues/ghost/traffic", Some(json!({"action": "stop"}))).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "POST", "/ues/u001/traffic", Some(json!({"action": "dance"}))).await.0, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/ues/u001/traffic", Some(json!({"action": "stop"}))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(call(&app, "DELETE", "/ues/u002", None).await.0, StatusCode::ACCEPTED);
    h.advance(1);
    let (_, v) = call(&app, "GET", "/ues/u001", None).await;
    assert_eq!(v["ue"]["traffic_active"], false);
    assert_eq!(v["ue"]["current_throughput"], 0.0);
    assert_eq!(call(&app, "GET", "/ues/u002", None).await.0, StatusCode::NOT_FOUND);
    h.shutdown();
}

#[tokio::test(flavor = "multi_thread")]
async fn pinned_throughput_enters_the_sector_load() {
    let h = sim();
    let app = router(h.clone());
    h.advance(1);
    let (s, v) = call(&app, "PATCH", "/ues/u001", Some(json!({"throughput_bps": 40.3e6}))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(v["apply_tick"], 1);
    h.advance(1);
    let (_, ue) = call(&app, "GET", "/ues/u001", None).await;
    assert_eq!(ue["ue"]["current_throughput"], 40.3e6);
    let sector = ue["ue"]["sector_id"].as_str().unwrap().to_string();
    let (_, sv) = call(&app, "GET", &format!("/sectors/{sector}"), None).await;
    assert_eq!(sv["tick"], 1);
    let mut others = 0.0;
    for id in sv["attached_ues"].as_array().unwrap() {
        let (_, u) = call(&app, "GET", &format!("/ues/{}", id.as_str().unwrap()), None).await;
        others += u["ue"]["current_throughput"].as_f64().unwrap();
    }
    let tp = sv["throughput_bps"].as_f64().unwrap();
    assert!((tp - others).abs() < 1e-6);
    assert!(tp >= 40.3e6);
    let n = sv["attached_ues"].as_array().unwrap().len() as f64;
    let cap = sv["ue_capacity"].as_f64().unwrap();
    let max = sv["max_throughput_bps"].as_f64().unwrap();
    let expected = 0.5 * n / cap * 100.0 + 0.5 * tp.min(max) / max * 100.0;
    assert!((sv["load"].as_f64().unwrap() - expected).abs() < 1e-9);

    assert_eq!(call(&app, "PATCH", "/ues/u001", Some(json!({"throughput_bps": -1.0}))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "PATCH", "/ues/u001", Some(json!({}))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "PATCH", "/ues/u001", Some(json!({"speed": 3}))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "PATCH", "/ues/ghost", Some(json!({"delay_s": 0.02}))).await.0, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "PATCH", "/ues/u001", Some(json!({"delay_s": 0.02}))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    h.shutdown();
}

#[tokio::test(flavor = "multi_thread")]
async fn sector_capacity_rules() {
    let h = sim();
    let app = router(h.clone());
    let uri = format!("/sectors/{RUSH_HOUR_SECTOR}");
    assert_eq!(call(&app, "PATCH", &uri, Some(json!({"ue_capacity": 9}))).await.0, StatusCode::CONFLICT);
    assert_eq!(call(&app, "PATCH", &uri, Some(json!({"ue_capacity": 0}))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "PATCH", "/sectors/nowhere", Some(json!({"ue_capacity": 20}))).await.0, StatusCode::NOT_FOUND);
    assert_eq!(raw(&app, "PATCH", &uri, "{not json").await, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "PATCH", &uri, Some(json!({"ue_capacity": 12, "max_throughput_bps": 5e7}))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    h.advance(1);
    let (_, v) = call(&app, "GET", &uri, None).await;
    assert_eq!(v["ue_capacity"], 12);
    assert_eq!(v["max_throughput_bps"], 5e7);
    assert_eq!(call(&app, "GET", "/sectors/nowhere", None).await.0, StatusCode::NOT_FOUND);
    h.shutdown();
}

#[tokio::test(flavor = "multi_thread")]
async fn sim_control() {
    let h = sim();
    let app = router(h.clone());
    assert_eq!(call(&app, "POST", "/sim", Some(json!({"action": "step", "n": 0}))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "POST", "/sim", Some(json!({"action": "rewind"}))).await.0, StatusCode::BAD_REQUEST);
    let (s, v) = call(&app, "POST", "/sim", Some(json!({"action": "step", "n": 3}))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let seq = v["seqs"][0].as_u64().unwrap();
    assert!(h.wait_applied(seq, Duration::from_secs(2)).is_some());
    assert!(h.wait_ticks(3, Duration::from_secs(2)));
    let (_, v) = call(&app, "POST", "/sim", Some(json!({"action": "pause"}))).await;
    h.wait_applied(v["seqs"][0].as_u64().unwrap(), Duration::from_secs(2)).unwrap();
    let (_, v) = call(&app, "GET", "/network", None).await;
    assert_eq!(v["paused"], true);
    assert_eq!(v["tick"], 2);
    h.shutdown();
}

#[tokio::test(flavor = "multi_thread")]
async fn ramp_read_paths_and_event_stream_agree() {
    let h = sim();
    let app = router(h.clone());
    let (s, v) = call(&app, "POST", "/scenarios", Some(json!({"name": "rush_hour"}))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(v["apply_tick"], 0);
    assert_eq!(call(&app, "POST", "/scenarios", Some(json!({"name": "monsoon"}))).await.0, StatusCode::NOT_FOUND);

    // scheduled from tick 1, ramp pinned at tick 1, crossing two steps later
    let mut crossing = None;
    for _ in 0..10 {
        h.advance(1);
        let (_, sv) = call(&app, "GET", &format!("/sectors/{RUSH_HOUR_SECTOR}"), None).await;
        let tick = sv["tick"].as_u64().unwrap();
        let load = sv["load"].as_f64().unwrap();
        let (_, q) = call(
            &app,
            "GET",
            &format!("/metrics/query?measurement=sector_load&sector={RUSH_HOUR_SECTOR}&from={tick}&to={tick}"),
            None,
        )
        .await;
        let points = q["points"].as_array().unwrap();
        assert_eq!(points.len(), 1);
        assert_eq!(points[0]["fields"]["load"].as_f64().unwrap(), load);
        if load >= 80.0 && crossing.is_none() {
            crossing = Some(tick);
        }
    }
    let crossing = crossing.expect("ramp crossed the threshold");
    assert_eq!(crossing, 3);

    let (_, stats) = call(&app, "GET", "/stats/handover", None).await;
    assert_eq!(stats["stats"]["attempts"], 1);
    assert_eq!(stats["stats"]["hsr"], 1.0);

    let req = Request::get("/events?since=0&types=handover").body(Body::empty()).unwrap();
    let text = read_stream(&app, req, |t| t.contains("event: handover")).await;
    let data = text.lines().find_map(|l| l.strip_prefix("data: ")).unwrap();
    let ev: Value = serde_json::from_str(data).unwrap();
    assert_eq!(ev["type"], "handover");
    assert_eq!(ev["start_tick"], crossing);
    assert_eq!(ev["source_sector"], RUSH_HOUR_SECTOR);
    h.shutdown();
}

#[tokio::test(flavor = "multi_thread")]
async fn event_stream_resumes_after_last_seen() {
    let h = sim();
    let app = router(h.clone());
    h.advance(4);
    let last = h.hub().last_seq();
    assert!(last >= 4);
    let k = last - 2;
    let req = Request::get(format!("/events?since={k}")).body(Body::empty()).unwrap();
    let text = read_stream(&app, req, |t| event_ids(t).len() >= 2).await;
    assert_eq!(event_ids(&text)[..2], [k + 1, k + 2]);

    let req = Request::get("/events").header("Last-Event-ID", k.to_string()).body(Body::empty()).unwrap();
    let text = read_stream(&app, req, |t| !event_ids(t).is_empty()).await;
    assert_eq!(event_ids(&text)[0], k + 1);

    let req = Request::get("/events").header("Last-Event-ID", "x").body(Body::empty()).unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::BAD_REQUEST);
    h.shutdown();
}

#[tokio::test(flavor = "multi_thread")]
async fn idle_stream_only_heartbeats() {
    let h = sim();
    let cfg = GatewayConfig {
        poll_interval: Duration::from_millis(10),
        heartbeat: Duration::from_millis(50),
    };
    let app = router_with(h.clone(), cfg);
    let req = Request::get("/events").body(Body::empty()).unwrap();
    let text = read_stream(&app, req, |t| t.matches(": heartbeat").count() >= 2).await;
    assert!(text.matches(": heartbeat").count() >= 2, "{text:?}");
    assert!(event_ids(&text).is_empty());
    h.shutdown();
}

#[tokio::test(flavor = "multi_thread")]
async fn export_is_line_protocol_text() {
    let h = sim();
    let app = router(h.clone());
    h.advance(2);
    let req = Request::get("/metrics/export?from=1&to=1").body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert!(resp.headers()[header::CONTENT_TYPE].to_str().unwrap().starts_with("text/plain"));
    let text = String::from_utf8(resp.into_body().collect().await.unwrap().to_bytes().to_vec()).unwrap();
    let expected = h.metrics().read().unwrap().export_line_protocol(1..=1);
    assert_eq!(text, expected);
    assert!(text.lines().all(|l| l.ends_with(" 1000000000")));
    assert_eq!(call(&app, "GET", "/metrics/export?from=soon", None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "GET", "/metrics/query", None).await.0, StatusCode::BAD_REQUEST);
    h.shutdown();
}

/// Same command script with and without interleaved reads.
async fn scripted(with_reads: bool) -> String {
    let h = sim();
    let app = router(h.clone());
    let reads = ["/network", "/loads", "/stats/handover", "/ues/u010", "/sectors/g2c3s1", "/metrics/export"];
    for step in 0..4u64 {
        if with_reads {
            for r in reads {
                call(&app, "GET", r, None).await;
            }
        }
        let (s, _) = call(&app, "PATCH", "/ues/u010", Some(json!({"throughput_bps": 1e6 * (step + 1) as f64}))).await;
        assert_eq!(s, StatusCode::ACCEPTED);
        h.advance(1);
    }
    let engine = h.shutdown().unwrap();
    let json = engine.record("scripted").to_json();
    let export = engine.metrics().export_line_protocol(..);
    format!("{json}\n{export}")
}

#[tokio::test(flavor = "multi_thread")]
async fn reads_have_no_side_effects() {
    assert_eq!(scripted(false).await, scripted(true).await);
}
