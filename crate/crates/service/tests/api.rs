use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rulemine_service::{router, AppState, Registry};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Server {
    dir: tempfile::TempDir,
    app: Router,
}

const PLACES: [&str; 8] = ["airport", "station", "museum", "beach", "harbor", "stadium", "old town", "market"];
const AMENITIES: [&str; 8] = ["gym", "pool", "sauna", "spa", "bar", "restaurant", "safe", "minibar"];
const DAYS: [&str; 7] = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"];

/// Hotel guest questions as labeled JSONL; positives ask for directions.
fn toy_corpus() -> (String, usize) {
    let mut rows: Vec<(String, bool)> = Vec::new();
    for p in PLACES {
        rows.push((format!("what is the best way to get to the {p} ?"), true));
        rows.push((format!("how do i get to the {p} from here ?"), true));
        rows.push((format!("best way to reach the {p} ?"), true));
        rows.push((format!("is there a shuttle to the {p} ?"), true));
        rows.push((format!("which bus goes to the {p} ?"), true));
        rows.push((format!("how far is the {p} ?"), true));
        rows.push((format!("where can i find a taxi for the {p} ?"), true));
    }
    for a in AMENITIES {
        rows.push((format!("is there a {a} in the hotel ?"), false));
        rows.push((format!("does the room have a {a} ?"), false));
        for d in DAYS {
            rows.push((format!("what time does the {a} open on {d} ?"), false));
        }
    }
    for d in DAYS {
        rows.push((format!("can i get a late checkout on {d} ?"), false));
    }
    let mut out = String::new();
    for (i, (text, label)) in rows.iter().enumerate() {
        out.push_str(&json!({ "id": i, "text": text, "label": label }).to_string());
        out.push('\n');
    }
    (out, rows.len())
}

fn open(dir: &std::path::Path) -> Router {
    router(AppState::open(Registry::open(dir).unwrap(), 1).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

const SEED: &str = "best way to";

/// A server with the toy corpus registered as "toy"; returns the seed rule.
async fn server() -> (Server, String) {
    let dir = tempfile::tempdir().unwrap();
    let app = open(dir.path());
    let (content, _) = toy_corpus();
    let (status, info) = call(&app, "POST", "/corpora", Some(json!({ "name": "toy", "content": content }))).await;
    assert_eq!(status, StatusCode::CREATED, "{info}");
    (Server { dir, app }, SEED.to_string())
}

fn session_body(phrase: &str, oracle: &str, budget: usize) -> Value {
    json!({
        "corpus": "toy",
        "grammar": "tokens_regex",
        "strategy": "hybrid",
        "seed": { "rule": phrase },
        "budget": budget,
        "oracle": oracle,
        "config": { "candidates": 500, "seed": 9 },
    })
}

async fn create(app: &Router, body: Value) -> String {
    let (status, v) = call(app, "POST", "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

/// The pending query once the session settles; `None` when it is done.
async fn settle(app: &Router, id: &str) -> Option<Value> {
    for _ in 0..6_000 {
        let (status, v) = call(app, "GET", &format!("/sessions/{id}/query"), None).await;
        match status {
            StatusCode::OK => return Some(v),
            StatusCode::NO_CONTENT => return None,
            StatusCode::ACCEPTED => tokio::time::sleep(Duration::from_millis(5)).await,
            other => panic!("{other}: {v}"),
        }
    }
    panic!("session {id} never settled");
}

async fn answer(app: &Router, id: &str, query_id: u64, yes: bool) -> (StatusCode, Value) {
    call(
        app,
        "POST",
        &format!("/sessions/{id}/answer"),
        Some(json!({ "query_id": query_id, "answer": if yes { "yes" } else { "no" } })),
    )
    .await
}

/// What a careful annotator says: YES when at least 80% of the pending
/// rule's coverage is positive.
async fn truthful(app: &Router, id: &str) -> bool {
    let (_, cov) = call(app, "GET", &format!("/sessions/{id}/coverage"), None).await;
    let labels: Vec<bool> = toy_corpus()
        .0
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["label"].as_bool().unwrap())
        .collect();
    let ids = cov["ids"].as_array().unwrap();
    let pos = ids.iter().filter(|i| labels[i.as_u64().unwrap() as usize]).count();
    pos as f64 >= 0.8 * ids.len() as f64
}

#[tokio::test]
async fn corpora_are_registered_and_listed() {
    let (s, _) = server().await;
    let (status, v) = call(&s.app, "GET", "/corpora", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["v"], 1);
    assert_eq!(v["corpora"][0]["name"], "toy");
    assert_eq!(v["corpora"][0]["sentences"], toy_corpus().1);
    assert_eq!(v["corpora"][0]["gold"], true);

    let again = json!({ "name": "toy", "content": "{\"id\": 1, \"text\": \"a b\"}\n" });
    assert_eq!(call(&s.app, "POST", "/corpora", Some(again)).await.0, StatusCode::CONFLICT);
    let torn = json!({ "name": "bad", "content": "{\"id\": 1, \"raw_text\"" });
    assert_eq!(call(&s.app, "POST", "/corpora", Some(torn)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let name = json!({ "name": "../etc", "content": "" });
    assert_eq!(call(&s.app, "POST", "/corpora", Some(name)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn session_creation_errors() {
    let (s, phrase) = server().await;
    let mut unknown = session_body(&phrase, "human", 5);
    unknown["corpus"] = json!("nope");
    assert_eq!(call(&s.app, "POST", "/sessions", Some(unknown)).await.0, StatusCode::NOT_FOUND);
    let empty = session_body("zzzz qqqq", "human", 5);
    let (status, v) = call(&s.app, "POST", "/sessions", Some(empty)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    assert!(v["message"].as_str().unwrap().contains("empty seed coverage"), "{v}");
    let broken = session_body("( best", "human", 5);
    assert_eq!(call(&s.app, "POST", "/sessions", Some(broken)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let one = json!({ "corpus": "toy", "seed": { "sentences": [0] }, "oracle": "human" });
    assert_eq!(call(&s.app, "POST", "/sessions", Some(one)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(call(&s.app, "GET", "/sessions/s-999999/state", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(answer(&s.app, "s-999999", 0, true).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn zero_budget_completes_with_the_seed_rule() {
    let (s, phrase) = server().await;
    let (status, v) = call(&s.app, "POST", "/sessions", Some(session_body(&phrase, "simulated", 0))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(v["status"], "done");
    let id = v["session_id"].as_str().unwrap();
    let (_, st) = call(&s.app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!((st["v"].clone(), st["queries_used"].clone(), st["rules"].clone()), (json!(1), json!(0), json!(1)));
    assert_eq!(st["accepted_rules"][0]["pattern"], phrase);
    assert_eq!(call(&s.app, "GET", &format!("/sessions/{id}/query"), None).await.0, StatusCode::NO_CONTENT);
}

#[tokio::test]
async fn human_session_waits_with_samples_from_the_coverage() {
    let (s, phrase) = server().await;
    let id = create(&s.app, session_body(&phrase, "human", 5)).await;
    let (_, st) = call(&s.app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(st["status"], "awaiting_answer");
    let q = settle(&s.app, &id).await.unwrap();
    assert_eq!(st["pending_query_id"], q["query_id"]);
    assert_eq!(q["samples"].as_array().unwrap().len(), 5);
    let (status, cov) = call(&s.app, "GET", &format!("/sessions/{id}/coverage"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(cov["coverage_size"], q["coverage_size"]);
    assert_eq!(cov["canonical"], q["heuristic"]["canonical"]);
    let ids: Vec<u64> = serde_json::from_value(cov["ids"].clone()).unwrap();
    for sample in q["samples"].as_array().unwrap() {
        assert!(ids.contains(&sample["id"].as_u64().unwrap()), "{sample}");
        assert!(!sample["spans"].as_array().unwrap().is_empty());
    }
    // an explicit rule gives the same set
    let display = q["heuristic"]["display"].as_str().unwrap();
    let uri = format!("/sessions/{id}/coverage?rule={}", display.replace(' ', "%20").replace('+', "%2B"));
    let (_, explicit) = call(&s.app, "GET", &uri, None).await;
    assert_eq!(explicit["ids"], cov["ids"]);
}

#[tokio::test]
async fn each_answer_is_applied_once() {
    let (s, phrase) = server().await;
    let id = create(&s.app, session_body(&phrase, "human", 5)).await;
    let q = settle(&s.app, &id).await.unwrap();
    let qid = q["query_id"].as_u64().unwrap();
    let (status, v) = answer(&s.app, &id, qid, false).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["status"], "advancing");
    // immediately and after the engine settles, the same id is stale
    assert_eq!(answer(&s.app, &id, qid, false).await.0, StatusCode::CONFLICT);
    let next = settle(&s.app, &id).await.unwrap();
    assert_eq!(next["query_id"].as_u64().unwrap(), qid + 1);
    assert_eq!(answer(&s.app, &id, qid, true).await.0, StatusCode::CONFLICT);
    assert_eq!(answer(&s.app, &id, qid + 7, false).await.0, StatusCode::CONFLICT);
    let (_, st) = call(&s.app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(st["queries_used"], 1);
    let log = std::fs::read_to_string(s.dir.path().join("sessions").join(&id).join("events.jsonl")).unwrap();
    assert_eq!(log.matches("\"answered\"").count(), 1, "{log}");
}

/// Answers a human session from `script` (by query order) to completion.
async fn answer_all(app: &Router, id: &str, script: &[bool]) -> usize {
    let mut n = 0;
    while let Some(q) = settle(app, id).await {
        let qid = q["query_id"].as_u64().unwrap();
        let (status, v) = answer(app, id, qid, script[qid as usize]).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        n += 1;
    }
    n
}

#[tokio::test]
async fn scripted_human_session_reproduces_the_simulated_run() {
    let (s, phrase) = server().await;
    let sim = create(&s.app, session_body(&phrase, "simulated", 10)).await;
    let (status, expected) = call(&s.app, "GET", &format!("/sessions/{sim}/results"), None).await;
    assert_eq!(status, StatusCode::OK);
    let script: Vec<bool> = expected["queries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|q| q["answer"].as_bool().unwrap())
        .collect();
    assert_eq!(script.len(), 10);
    assert!(script.iter().any(|&a| a) && script.iter().any(|&a| !a), "{script:?}");

    let human = create(&s.app, session_body(&phrase, "human", 10)).await;
    assert_eq!(answer_all(&s.app, &human, &script).await, 10);
    let (_, got) = call(&s.app, "GET", &format!("/sessions/{human}/results"), None).await;
    assert_eq!(got, expected);
    let (_, a) = call(&s.app, "GET", &format!("/sessions/{sim}/state"), None).await;
    let (_, b) = call(&s.app, "GET", &format!("/sessions/{human}/state"), None).await;
    for key in ["queries_used", "positives", "rules", "recall", "curve", "accepted_rules", "status"] {
        assert_eq!(a[key], b[key], "{key}");
    }
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let (s, phrase) = server().await;
    let id = create(&s.app, session_body(&phrase, "human", 8)).await;
    for _ in 0..3 {
        let q = settle(&s.app, &id).await.unwrap();
        let yes = truthful(&s.app, &id).await;
        assert_eq!(answer(&s.app, &id, q["query_id"].as_u64().unwrap(), yes).await.0, StatusCode::OK);
    }
    let pending = settle(&s.app, &id).await.unwrap();
    let note = json!({ "text": "ambiguous samples" });
    assert_eq!(call(&s.app, "POST", &format!("/sessions/{id}/notes"), Some(note)).await.0, StatusCode::CREATED);
    let (_, before) = call(&s.app, "GET", &format!("/sessions/{id}/state"), None).await;
    let (_, tree_before) = call(&s.app, "GET", &format!("/sessions/{id}/hierarchy"), None).await;

    let app = open(s.dir.path());
    assert_eq!(settle(&app, &id).await.unwrap(), pending);
    let (_, after) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(after, before);
    assert_eq!(after["notes"][0]["text"], "ambiguous samples");
    let (_, tree_after) = call(&app, "GET", &format!("/sessions/{id}/hierarchy"), None).await;
    assert_eq!(tree_after, tree_before);
    // the restart re-issues the same query rather than logging a new one
    let log = std::fs::read_to_string(s.dir.path().join("sessions").join(&id).join("events.jsonl")).unwrap();
    assert_eq!(log.matches("\"query_issued\"").count(), 4, "{log}");
    // new sessions do not reuse ids
    assert_ne!(create(&app, session_body(&phrase, "human", 2)).await, id);
}

#[tokio::test]
async fn a_crash_after_persisting_an_answer_recovers_without_reasking() {
    let (s, phrase) = server().await;
    let id = create(&s.app, session_body(&phrase, "human", 12)).await;
    // answer truthfully up to the first rule worth accepting
    let (q, qid) = loop {
        let q = settle(&s.app, &id).await.unwrap();
        let qid = q["query_id"].as_u64().unwrap();
        if truthful(&s.app, &id).await {
            break (q, qid);
        }
        assert_eq!(answer(&s.app, &id, qid, false).await.0, StatusCode::OK);
    };
    // the answer reaches the log, then the process dies before the engine
    // applies it; the last write is torn
    let path = s.dir.path().join("sessions").join(&id).join("events.jsonl");
    let answered = json!({
        "event": "answered",
        "query_id": qid,
        "canonical": q["heuristic"]["canonical"],
        "answer": true,
    });
    let mut log = std::fs::read_to_string(&path).unwrap();
    log.push_str(&format!("{answered}\n{{\"event\": \"note\", \"te"));
    std::fs::write(&path, log).unwrap();
    drop(s.app);

    let app = open(s.dir.path());
    let (_, st) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(st["queries_used"], qid + 1, "{st}");
    assert_eq!(st["rules"], 2);
    assert_eq!(st["accepted_rules"][1]["canonical"], q["heuristic"]["canonical"]);
    let next = settle(&app, &id).await.unwrap();
    assert_eq!(next["query_id"].as_u64().unwrap(), qid + 1);
    assert_ne!(next["heuristic"]["canonical"], q["heuristic"]["canonical"]);
    assert_eq!(answer(&app, &id, qid, true).await.0, StatusCode::CONFLICT);
    // the recovered log is whole again and records the acceptance
    let log = std::fs::read_to_string(&path).unwrap();
    assert!(log.ends_with('\n'));
    assert_eq!(log.matches("\"accepted\"").count(), 1, "{log}");
    // and the session carries on
    assert_eq!(answer(&app, &id, qid + 1, false).await.0, StatusCode::OK);
    assert_eq!(settle(&app, &id).await.unwrap()["query_id"].as_u64().unwrap(), qid + 2);
}

#[tokio::test]
async fn sessions_are_listed_and_independent() {
    let (s, phrase) = server().await;
    let a = create(&s.app, session_body(&phrase, "human", 3)).await;
    let b = create(&s.app, session_body(&phrase, "human", 3)).await;
    let qa = settle(&s.app, &a).await.unwrap();
    assert_eq!(answer(&s.app, &a, qa["query_id"].as_u64().unwrap(), false).await.0, StatusCode::OK);
    let qb = settle(&s.app, &b).await.unwrap();
    // b has not moved: it still shows the query a was first asked
    assert_eq!(qb, qa);
    let (_, list) = call(&s.app, "GET", "/sessions", None).await;
    let ids: Vec<&str> = list["sessions"].as_array().unwrap().iter().map(|x| x["session_id"].as_str().unwrap()).collect();
    assert_eq!(ids, vec![a.as_str(), b.as_str()]);
}
