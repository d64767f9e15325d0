use std::path::Path;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use clap::Parser;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use hapticauth_cli::cli::{open_live_session, Cli, Command};
use hapticauth_cli::service::{router, spawn, Clock};
use hapticauth_core::live::LiveSession;
use hapticauth_core::metrics::{aggregate, SessionLog};

/// Virtual clock that moves 10 s per reading.
fn stepping_clock() -> Clock {
    let mut t = 0;
    Box::new(move || {
        t += 10_000;
        t
    })
}

fn serve_args(extra: &[&str]) -> hapticauth_cli::cli::ServeArgs {
    let mut argv = vec!["hapticauth", "serve"];
    argv.extend(extra);
    match Cli::parse_from(argv).command {
        Command::Serve(a) => a,
        _ => unreachable!(),
    }
}

fn app(log: &Path, resume: bool) -> (Router, LiveSession) {
    let log = log.to_str().unwrap();
    let mut args = vec!["--log", log, "--pattern", "2", "--seed", "7"];
    if resume {
        args.push("--resume");
    }
    let (session, _) = open_live_session(&serve_args(&args)).unwrap();
    let check = LiveSession::replay(session.log()).unwrap();
    (router(spawn(session, stepping_clock())), check)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let res = app
        .clone()
        .oneshot(Request::get(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn post(app: &Router, body: Value) -> (StatusCode, Value) {
    post_raw(app, body.to_string()).await
}

async fn post_raw(app: &Router, body: String) -> (StatusCode, Value) {
    let res = app
        .clone()
        .oneshot(
            Request::post("/commands")
                .header("content-type", "application/json")
                .body(Body::from(body))
                .unwrap(),
        )
        .await
        .unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

/// Reads server-sent events until `want` `data:` payloads have arrived.
async fn read_events(app: &Router, uri: &str, want: usize) -> Vec<Value> {
    let res = app
        .clone()
        .oneshot(Request::get(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    assert!(res.headers()["content-type"].to_str().unwrap().starts_with("text/event-stream"));
    let mut body = res.into_body();
    let mut text = String::new();
    let mut events = Vec::new();
    while events.len() < want {
        let frame = tokio::time::timeout(Duration::from_secs(5), body.frame())
            .await
            .expect("event arrives")
            .unwrap()
            .unwrap();
        if let Ok(data) = frame.into_data() {
            text.push_str(std::str::from_utf8(&data).unwrap());
        }
        events = text
            .lines()
            .filter_map(|l| l.strip_prefix("data: "))
            .map(|d| serde_json::from_str(d).unwrap())
            .collect();
    }
    events
}

#[tokio::test]
async fn start_then_snapshot_shows_first_trial_pending() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(&dir.path().join("s.jsonl"), false);
    let (status, body) = post(&app, json!({"kind": "start_session"})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["accepted"], true);
    assert_eq!(body["events"][0]["event"]["kind"], "session_started");

    let (status, snap) = get(&app, "/session").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(snap["phase"], "running");
    assert_eq!(snap["next_trial"], 1);
    assert_eq!(snap["schedule"][0]["status"], "pending");
    assert_eq!(snap["schedule"].as_array().unwrap().len(), 24);

    let (_, schedule) = get(&app, "/schedule").await;
    assert_eq!(schedule["trials"].as_array().unwrap().len(), 24);
}

#[tokio::test]
async fn injected_vibration_reaches_event_stream() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(&dir.path().join("s.jsonl"), false);
    post(&app, json!({"kind": "start_session"})).await;
    let (status, _) = post(&app, json!({"kind": "inject_vibration", "pattern": "1 3"})).await;
    assert_eq!(status, StatusCode::OK);

    let events = read_events(&app, "/events", 2).await;
    let vib = &events[1]["event"];
    assert_eq!(vib["kind"], "vibration_emitted");
    assert_eq!(vib["pattern"], "1 3");
    assert_eq!(vib["duration_ms"], 560);
    assert_eq!(vib["source"], "injected");
    let bursts = vib["timeline"].as_array().unwrap();
    assert_eq!(bursts.len(), 4);
    assert_eq!(bursts[3], json!([500, 60]));
}

#[tokio::test]
async fn event_stream_resumes_after_id_and_delivers_live_events() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(&dir.path().join("s.jsonl"), false);
    post(&app, json!({"kind": "start_session"})).await;
    post(&app, json!({"kind": "suppress_next"})).await;

    let stream_app = app.clone();
    let reader = tokio::spawn(async move { read_events(&stream_app, "/events?after=0", 2).await });
    tokio::time::sleep(Duration::from_millis(50)).await;
    post(&app, json!({"kind": "inject_vibration", "pattern": "2"})).await;
    let events = reader.await.unwrap();
    assert_eq!(events[0]["seq"], 1);
    assert_eq!(events[0]["event"]["kind"], "suppress_armed");
    assert_eq!(events[1]["event"]["kind"], "vibration_emitted");
}

#[tokio::test]
async fn invalid_commands_get_structured_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(&dir.path().join("s.jsonl"), false);

    let (status, body) = post(&app, json!({"kind": "record_response", "value": "no_report"})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["rejection"]["code"], "not_started");

    post(&app, json!({"kind": "start_session"})).await;
    let (status, body) = post(&app, json!({"kind": "record_response", "value": "no_report"})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["rejection"]["code"], "no_active_trial");

    post(&app, json!({"kind": "advance_trial"})).await;
    let (status, _) = post(&app, json!({"kind": "record_response", "value": "no_report"})).await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = post(&app, json!({"kind": "record_response", "value": "no_report"})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["rejection"]["command"], "record_response");

    let (status, body) = post_raw(&app, "{\"kind\": \"launch\"}".into()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "malformed_command");
    let (status, _) = post(&app, json!({"kind": "inject_vibration", "pattern": "0"})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn full_session_log_aggregates_and_recovers() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("live.jsonl");
    let (app, _) = app(&log, false);
    post(&app, json!({"kind": "start_session"})).await;
    let responses = ["recognized_own_on_wake", "no_report", "report_unexpected_own", "report_absent_or_wrong"];
    for i in 0..24 {
        if i == 5 {
            post(&app, json!({"kind": "inject_vibration", "pattern": "3"})).await;
        }
        let (status, body) = post(&app, json!({"kind": "advance_trial"})).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let (status, _) = post(&app, json!({"kind": "record_response", "value": responses[i % 4]})).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (status, _) = post(&app, json!({"kind": "advance_trial"})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (_, before) = get(&app, "/session").await;
    assert_eq!(before["completed"], 24);
    assert!(before["schedule"].as_array().unwrap().iter().all(|t| t["status"] == "done"));
    drop(app);

    // live logs aggregate exactly like simulated ones
    let parsed = SessionLog::read_from(&log).unwrap();
    let report = aggregate(&[parsed]).unwrap();
    assert_eq!(report.overall.total, 24);

    // restart from the log
    let (restarted, replayed) = app_resume(&log);
    let (_, after) = get(&restarted, "/session").await;
    assert_eq!(after, before);
    assert_eq!(serde_json::to_value(replayed.snapshot()).unwrap(), before);
    let (status, body) = post(&restarted, json!({"kind": "end_session"})).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let reread = SessionLog::read_from(&log).unwrap();
    assert!(LiveSession::replay(&reread).is_ok());
}

fn app_resume(log: &Path) -> (Router, LiveSession) {
    app(log, true)
}

#[tokio::test]
async fn existing_log_requires_resume() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("s.jsonl");
    let _ = app(&log, false);
    let args = serve_args(&["--log", log.to_str().unwrap()]);
    assert!(open_live_session(&args).is_err());
}
