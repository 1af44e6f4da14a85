use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use dbdoctor::api::router;
use dbdoctor::config::AppConfig;
use dbdoctor::session::{SessionManager, SessionStatus};
use dbdoctor_core::gateway::ProviderConfig;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;
use tower::ServiceExt;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

/// Bundled config with sessions kept in `dir`.
fn config(dir: &Path) -> AppConfig {
    let mut cfg = AppConfig::load(&data_dir().join("dbdoctor.json")).unwrap();
    cfg.sessions_dir = dir.join("sessions");
    cfg
}

/// Collaborative script whose Chief first asks the human and waits.
fn asking_config(dir: &Path) -> AppConfig {
    let mut cfg = config(dir);
    let src = data_dir().join("scenarios/workload_contention/collab_script.json");
    let mut rules: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(src).unwrap()).unwrap();
    rules.insert(
        0,
        json!({"match": "[task: chief_review]", "reply": "ASK_HUMAN Has the campaign endpoint been throttled yet?", "max_uses": 1}),
    );
    let path = dir.join("asking.json");
    std::fs::write(&path, serde_json::to_string(&rules).unwrap()).unwrap();
    cfg.collab_provider = Some(ProviderConfig::scripted(path));
    cfg.collab.feedback_wait_ms = 20_000;
    cfg
}

fn alert() -> Value {
    json!({
        "alert_id": "workload_contention",
        "start_time": 1684600060,
        "end_time": 1684600120,
        "description": "Checkout requests slowed down during a marketing campaign.",
        "anomaly_class": "running_slow"
    })
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

fn assert_error(v: &Value, code: &str) {
    assert_eq!(v["code"], code, "{v}");
    assert!(v["message"].as_str().is_some_and(|m| !m.is_empty()));
    assert_eq!(v.as_object().unwrap().len(), 2);
}

fn setup(cfg: AppConfig) -> (Arc<SessionManager>, Router) {
    let m = Arc::new(SessionManager::new(cfg).unwrap());
    (m.clone(), router(m))
}

#[tokio::test]
async fn start_list_fetch_and_duplicate() {
    let dir = tempfile::tempdir().unwrap();
    let (m, app) = setup(config(dir.path()));
    let (st, v) = call(&app, "POST", "/api/sessions", Some(json!({"alert": alert(), "mode": "single", "session_id": "s1"}))).await;
    assert_eq!(st, StatusCode::CREATED);
    assert_eq!(v, json!({"session_id": "s1", "status": "running"}));

    let (st, v) = call(&app, "POST", "/api/sessions", Some(json!({"alert": alert(), "mode": "single", "session_id": "s1"}))).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_error(&v, "duplicate_session");

    let done = m.wait("s1", Duration::from_secs(30)).unwrap();
    assert_eq!(done.status, SessionStatus::Done);

    let (_, v) = call(&app, "GET", "/api/sessions", None).await;
    assert_eq!(v["sessions"][0]["session_id"], "s1");
    assert_eq!(v["sessions"][0]["status"], "done");

    let (st, v) = call(&app, "GET", "/api/sessions/s1", None).await;
    assert_eq!(st, StatusCode::OK);
    assert!(v["report"]["causes"].as_array().unwrap().iter().any(|c| c["cause_id"] == "WORKLOAD_CONTENTION"));
    assert!(dir.path().join("sessions/s1/session.json").exists());
    assert!(dir.path().join("sessions/s1/transcript.json").exists());

    // Generated ids are derived from the alert.
    let (_, v) = call(&app, "POST", "/api/sessions", Some(json!({"alert": alert(), "mode": "single"}))).await;
    assert!(v["session_id"].as_str().unwrap().starts_with("workload_contention-"));
}

#[tokio::test]
async fn messages_are_paged_by_cursor() {
    let dir = tempfile::tempdir().unwrap();
    let (m, app) = setup(config(dir.path()));
    call(&app, "POST", "/api/sessions", Some(json!({"alert": alert(), "mode": "single", "session_id": "p"}))).await;
    m.wait("p", Duration::from_secs(30)).unwrap();

    let (_, all) = call(&app, "GET", "/api/sessions/p/messages", None).await;
    let msgs = all["messages"].as_array().unwrap();
    assert!(msgs.len() >= 2);
    assert_eq!(all["cursor"], msgs.last().unwrap()["seq"]);
    assert_eq!(all["status"], "done");

    let first = msgs[0]["seq"].as_u64().unwrap();
    let (_, rest) = call(&app, "GET", &format!("/api/sessions/p/messages?since={first}"), None).await;
    assert_eq!(rest["messages"].as_array().unwrap().len(), msgs.len() - 1);
    assert!(rest["messages"].as_array().unwrap().iter().all(|r| r["seq"].as_u64().unwrap() > first));

    let (_, empty) = call(&app, "GET", &format!("/api/sessions/p/messages?since={}", all["cursor"]), None).await;
    assert!(empty["messages"].as_array().unwrap().is_empty());
    assert_eq!(empty["cursor"], all["cursor"]);

    let (st, v) = call(&app, "GET", "/api/sessions/p/messages?since=abc", None).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_error(&v, "bad_request");
}

#[tokio::test]
async fn feedback_reaches_a_waiting_session() {
    let dir = tempfile::tempdir().unwrap();
    let (m, app) = setup(asking_config(dir.path()));
    call(&app, "POST", "/api/sessions", Some(json!({"alert": alert(), "mode": "collaborative", "session_id": "c"}))).await;

    let deadline = std::time::Instant::now() + Duration::from_secs(30);
    while m.get("c").unwrap().status != SessionStatus::AwaitingFeedback {
        assert!(std::time::Instant::now() < deadline, "session never asked for feedback");
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    let (_, v) = call(&app, "GET", "/api/sessions/c", None).await;
    assert_eq!(v["status"], "awaiting-feedback");
    let (st, v) = call(&app, "POST", "/api/sessions/c/verdict", Some(json!({"cause_id": "X", "accepted": true}))).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_error(&v, "session_not_done");

    let (st, v) = call(&app, "POST", "/api/sessions/c/feedback", Some(json!({"text": "solution 1 verified effective"}))).await;
    assert_eq!(st, StatusCode::ACCEPTED);
    assert_eq!(v["accepted"], true);
    let seq = v["seq"].as_u64().unwrap();

    let done = m.wait("c", Duration::from_secs(30)).unwrap();
    assert_eq!(done.status, SessionStatus::Done);
    let report = done.report.unwrap();
    assert!(report.notes.iter().any(|n| n.contains("solution 1 verified effective")));
    let human = report.transcript.iter().find(|r| r.seq == seq).unwrap();
    assert_eq!(human.speaker, "human");
    assert!(report.transcript.iter().any(|r| r.analysis.contains("Has the campaign endpoint been throttled")));

    let (st, v) = call(&app, "POST", "/api/sessions/c/feedback", Some(json!({"text": "too late"}))).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_error(&v, "terminal_session");
}

#[tokio::test]
async fn verdicts_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let (m, app) = setup(config(dir.path()));
    call(&app, "POST", "/api/sessions", Some(json!({"alert": alert(), "mode": "single", "session_id": "v"}))).await;
    m.wait("v", Duration::from_secs(30)).unwrap();

    let (st, v) = call(&app, "POST", "/api/sessions/v/verdict", Some(json!({"cause_id": "WORKLOAD_CONTENTION", "accepted": true}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["verdicts"], json!([{"cause_id": "WORKLOAD_CONTENTION", "accepted": true}]));
    // A second verdict on the same cause replaces the first.
    let (_, v) = call(&app, "POST", "/api/sessions/v/verdict", Some(json!({"cause_id": "workload_contention", "accepted": false}))).await;
    assert_eq!(v["verdicts"], json!([{"cause_id": "WORKLOAD_CONTENTION", "accepted": false}]));

    let s = m.get("v").unwrap();
    let notes = &s.report.unwrap().notes;
    assert!(notes.contains(&"Verdict: WORKLOAD_CONTENTION accepted by the user.".to_string()));
    assert!(notes.contains(&"Verdict: WORKLOAD_CONTENTION rejected by the user.".to_string()));
    let stored = std::fs::read_to_string(dir.path().join("sessions/v/session.json")).unwrap();
    assert!(stored.contains("\"accepted\": false") || stored.contains("\"accepted\":false"));

    let (st, v) = call(&app, "POST", "/api/sessions/v/verdict", Some(json!({"cause_id": "DISK_FULL", "accepted": true}))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_error(&v, "unknown_cause");
}

#[tokio::test]
async fn baseline_sessions_never_touch_the_knowledge_base() {
    let dir = tempfile::tempdir().unwrap();
    let (m, app) = setup(config(dir.path()));
    call(&app, "POST", "/api/sessions", Some(json!({"alert": alert(), "mode": "baseline-metrics-only", "session_id": "b"}))).await;
    call(&app, "POST", "/api/sessions", Some(json!({"alert": alert(), "mode": "single", "session_id": "d"}))).await;
    let b = m.wait("b", Duration::from_secs(30)).unwrap();
    let d = m.wait("d", Duration::from_secs(30)).unwrap();
    assert_eq!(b.status, SessionStatus::Done);
    assert_eq!(b.access.kb_lookups, 0);
    assert!(d.access.kb_lookups > 0);
    let advisors = ["index_advisor", "knob_advisor", "query_rewrite_advisor"];
    assert!(b.access.tool_calls.keys().all(|k| !advisors.contains(&k.as_str())));
}

#[tokio::test]
async fn catalog_endpoints_and_error_shape() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = setup(config(dir.path()));
    let (st, v) = call(&app, "GET", "/api/tools", None).await;
    assert_eq!(st, StatusCode::OK);
    assert!(v["tools"].as_array().unwrap().iter().any(|t| t["name"] == "fetch_metric"));
    let (_, v) = call(&app, "GET", "/api/experience", None).await;
    assert!(v["experience"].as_array().unwrap().iter().any(|s| s["name"] == "many_dead_tuples"));

    let (st, v) = call(&app, "GET", "/api/sessions/nope", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_error(&v, "not_found");
    let (st, v) = call(&app, "GET", "/api/nothing/here", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_error(&v, "not_found");
    let (st, v) = call(&app, "POST", "/api/sessions", Some(json!({"mode": "single"}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_error(&v, "bad_request");
    let (st, v) = call(&app, "POST", "/api/sessions", Some(json!({"alert": alert(), "mode": "single", "session_id": "../etc"}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_error(&v, "bad_request");
    let mut backwards = alert();
    backwards["end_time"] = json!(1);
    let (st, v) = call(&app, "POST", "/api/sessions", Some(json!({"alert": backwards, "mode": "single"}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_error(&v, "bad_request");
    let (st, v) = call(&app, "POST", "/api/sessions/nope/feedback", Some(json!({"text": "  "}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_error(&v, "bad_request");
}
