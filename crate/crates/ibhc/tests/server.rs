use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use ibhc::dataset::{parse_dataset, target_from_labels, LoadOptions};
use ibhc::formats::{read_jsonl, Answer, QueryRecord};
use ibhc::newick::{parse_newick, LabelTable};
use ibhc::server::{router, AppState, DatasetEntry};
use ibhc::session::{SessionConfig, SessionEngine};
use ibhc_core::query::simulated_oracle;
use ibhc_core::{check_satisfies, Triplet, TripletSet};
use rand::SeedableRng;
use serde_json::{json, Value};
use tower::ServiceExt;

const CSV: &str = "x,y,name,k\n-3.1,0.2,a,0\n2.9,-0.1,b,1\n-2.8,0.4,c,0\n3.3,0.3,d,1\n-3.0,-0.5,e,0\n3.1,0.1,f,1\n-2.7,0.0,g,0\n2.8,-0.4,h,1\n-3.4,0.2,i,0\n3.0,0.5,j,1\n-3.2,-0.2,k,0\n3.2,-0.3,l,1\n";

fn entry(labels: bool) -> DatasetEntry {
    let data = parse_dataset(CSV.as_bytes(), Path::new("toy.csv"), &LoadOptions {
        label_column: Some("k".into()),
        name_column: Some("name".into()),
        ..Default::default()
    })
    .unwrap();
    let target = labels.then(|| Arc::new(target_from_labels(&data).unwrap()));
    DatasetEntry { data, target }
}

fn app(log_dir: Option<&Path>) -> Router {
    let mut ds = HashMap::new();
    ds.insert("toy".to_string(), entry(true));
    ds.insert("plain".to_string(), entry(false));
    router(Arc::new(AppState::new(ds, log_dir.map(Path::to_path_buf))))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

async fn raw(app: &Router, uri: &str, body: &str) -> (StatusCode, Value) {
    let req = Request::builder().method("POST").uri(uri).body(Body::from(body.to_string())).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn small() -> Value {
    json!({"dataset": "toy", "scheme": "random", "iterations_per_query": 5, "subset_size": 5, "candidates_L": 3, "seed": 4})
}

#[tokio::test]
async fn healthz_is_ok() {
    let (s, v) = call(&app(None), "GET", "/healthz", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
}

#[tokio::test]
async fn create_gives_distinct_sampling_sessions() {
    let app = app(None);
    let (s1, a) = call(&app, "POST", "/sessions", Some(small())).await;
    let (s2, b) = call(&app, "POST", "/sessions", Some(small())).await;
    assert_eq!((s1, s2), (StatusCode::CREATED, StatusCode::CREATED));
    assert_eq!(a["status"], "sampling");
    assert_ne!(a["id"], b["id"]);
    let (s, st) = call(&app, "GET", &format!("/sessions/{}/state", a["id"].as_str().unwrap()), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(st["constraints_count"], 0);
    assert!(st["iteration"].as_u64().unwrap() <= 5);
}

#[tokio::test]
async fn create_errors() {
    let app = app(None);
    let (s, v) = call(&app, "POST", "/sessions", Some(json!({"dataset": "nope"}))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_dataset")));
    assert!(v["message"].as_str().unwrap().contains("nope"));
    let (s, v) = call(&app, "POST", "/sessions", Some(json!({"dataset": "toy", "scheme": "psychic"}))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid_config")));
    let (s, v) = call(&app, "POST", "/sessions", Some(json!({"dataset": "toy", "subset_size": 50}))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid_config")));
    let (s, v) = raw(&app, "/sessions", "{not json").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("bad_request")));
    let (s, v) = call(&app, "GET", "/sessions/s999/query", None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_session")));
    let (s, _) = call(&app, "GET", "/sessions/s999/state", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn query_is_idempotent_and_shows_the_induced_subtree() {
    let app = app(None);
    let (_, c) = call(&app, "POST", "/sessions", Some(small())).await;
    let id = c["id"].as_str().unwrap();
    let (s, q1) = call(&app, "GET", &format!("/sessions/{id}/query"), None).await;
    assert_eq!(s, StatusCode::OK);
    let (_, q2) = call(&app, "GET", &format!("/sessions/{id}/query"), None).await;
    assert_eq!(q1, q2);
    let subset: Vec<usize> = serde_json::from_value(q1["subset"].clone()).unwrap();
    assert_eq!(subset.len(), 5);
    assert_eq!(q1["leaves"][0]["name"], ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l"][subset[0]]);

    let (_, st) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(st["status"], "awaiting_answer");
    assert_eq!(st["iteration"], 5);
    let names: Vec<String> = "abcdefghijkl".chars().map(String::from).collect();
    let table = LabelTable::from_names(&names);
    let current = parse_newick(st["tree"].as_str().unwrap(), &table).unwrap();
    let shown = parse_newick(q1["newick"].as_str().unwrap(), &table).unwrap();
    assert!(shown.same_topology(&current.induce(&subset).unwrap()));
    assert_eq!(q1["nodes"].as_array().unwrap().len(), 4);
}

#[tokio::test]
async fn answers_update_constraints() {
    let app = app(None);
    let (_, c) = call(&app, "POST", "/sessions", Some(small())).await;
    let id = c["id"].as_str().unwrap();
    let answer = format!("/sessions/{id}/answer");
    let (s, v) = call(&app, "POST", &answer, Some(json!({"accept": true}))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("no_pending_query")));

    let (_, q) = call(&app, "GET", &format!("/sessions/{id}/query"), None).await;
    let subset: Vec<usize> = serde_json::from_value(q["subset"].clone()).unwrap();
    let outside = (0..12).find(|i| !subset.contains(i)).unwrap();
    let (s, v) = call(&app, "POST", &answer, Some(json!({"triplet": {"pair": [subset[0], subset[1]], "outgroup": outside}}))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("outside_subset")));
    for bad in [json!({"triplet": {"pair": [subset[0], subset[0]], "outgroup": subset[1]}}), json!({"accept": false}), json!({"maybe": 1}), json!({})] {
        let (s, v) = call(&app, "POST", &answer, Some(bad.clone())).await;
        assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid")), "{bad}");
    }

    let t = json!({"triplet": {"pair": [subset[0], subset[1]], "outgroup": subset[2]}});
    let (s, v) = call(&app, "POST", &answer, Some(t.clone())).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!((v["added"].as_bool(), v["constraints_count"].as_u64()), (Some(true), Some(1)));

    let (_, st) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(st["constraints"], json!([format!("{} {} | {}", subset[0].min(subset[1]), subset[0].max(subset[1]), subset[2])]));
    let tree = parse_newick(st["tree"].as_str().unwrap(), &LabelTable::from_names(&"abcdefghijkl".chars().map(String::from).collect::<Vec<_>>())).unwrap();
    let mut c = TripletSet::new();
    c.insert(Triplet::new(subset[0], subset[1], subset[2]).unwrap());
    assert!(check_satisfies(&tree, &c).unwrap());
    assert_eq!(st["log_posterior"].as_array().unwrap().len(), 2);
    assert_eq!(st["triplet_distance"].as_array().unwrap().len(), 2);

    // accept leaves the count alone
    call(&app, "GET", &format!("/sessions/{id}/query"), None).await;
    let (_, v) = call(&app, "POST", &answer, Some(json!({"accept": true}))).await;
    assert_eq!((v["added"].as_bool(), v["constraints_count"].as_u64()), (Some(false), Some(1)));

    // TD is absent without a target
    let mut plain = small();
    plain["dataset"] = "plain".into();
    let (_, c) = call(&app, "POST", "/sessions", Some(plain)).await;
    let (_, st) = call(&app, "GET", &format!("/sessions/{}/state", c["id"].as_str().unwrap()), None).await;
    assert!(st.get("triplet_distance").is_none());
}

#[tokio::test]
async fn contradicting_answer_is_refused() {
    let app = app(None);
    let mut cfg = small();
    cfg["subset_size"] = 12.into();
    let (_, c) = call(&app, "POST", "/sessions", Some(cfg)).await;
    let id = c["id"].as_str().unwrap();
    let answer = format!("/sessions/{id}/answer");
    call(&app, "GET", &format!("/sessions/{id}/query"), None).await;
    let (s, _) = call(&app, "POST", &answer, Some(json!({"triplet": {"pair": [0, 1], "outgroup": 2}}))).await;
    assert_eq!(s, StatusCode::OK);
    call(&app, "GET", &format!("/sessions/{id}/query"), None).await;
    let (s, v) = call(&app, "POST", &answer, Some(json!({"triplet": {"pair": [0, 1], "outgroup": 2}}))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("duplicate")));
    let (s, v) = call(&app, "POST", &answer, Some(json!({"triplet": {"pair": [0, 2], "outgroup": 1}}))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("unrealizable")));
    assert!(v["message"].as_str().unwrap().contains("contradicts"));
}

#[tokio::test]
async fn session_log_replays_to_the_same_tree() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(Some(dir.path()));
    let mut cfg = small();
    cfg["scheme"] = "interleaved".into();
    let (_, c) = call(&app, "POST", "/sessions", Some(cfg)).await;
    let id = c["id"].as_str().unwrap();
    let e = entry(true);
    let target = e.target.clone().unwrap();
    let names: Vec<String> = "abcdefghijkl".chars().map(String::from).collect();
    let table = LabelTable::from_names(&names);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    for _ in 0..8 {
        let (_, q) = call(&app, "GET", &format!("/sessions/{id}/query"), None).await;
        let shown = parse_newick(q["newick"].as_str().unwrap(), &table).unwrap();
        let body = match simulated_oracle(&target, &shown, &mut rng).unwrap() {
            None => json!({"accept": true}),
            Some(t) => json!({"triplet": {"pair": [t.pair().0, t.pair().1], "outgroup": t.outgroup()}}),
        };
        let (s, v) = call(&app, "POST", &format!("/sessions/{id}/answer"), Some(body)).await;
        assert_eq!(s, StatusCode::OK, "{v}");
    }
    // pause at the next boundary so both sides sit at the same iteration
    let (_, next) = call(&app, "GET", &format!("/sessions/{id}/query"), None).await;
    let (_, st) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;

    let head: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("{id}.config.json"))).unwrap()).unwrap();
    assert_eq!(head["dataset"], "toy");
    let mut head = head;
    head.as_object_mut().unwrap().remove("dataset");
    let config: SessionConfig = serde_json::from_value(head).unwrap();
    let log: Vec<QueryRecord> = read_jsonl(std::io::BufReader::new(std::fs::File::open(dir.path().join(format!("{id}.jsonl"))).unwrap())).unwrap();
    assert_eq!(log.len(), 8);
    assert!(log.iter().any(|r| r.answer != Answer::Accept));
    let mut replayed = SessionEngine::replay(&e.data, e.target.clone(), config, &log).unwrap();
    assert_eq!(serde_json::to_value(replayed.pose_query().unwrap()).unwrap(), next);
    let rs = serde_json::to_value(replayed.state()).unwrap();
    assert_eq!(rs["tree"], st["tree"]);
    assert_eq!(rs["constraints"], st["constraints"]);
    assert_eq!(rs["log_posterior"], st["log_posterior"]);
    assert_eq!(rs["iteration"], st["iteration"]);
}
