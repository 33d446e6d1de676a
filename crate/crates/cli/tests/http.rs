use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use oobn::corpus;
use oobn_cli::server::{router, AppState};

struct Api {
    app: axum::Router,
}

impl Api {
    fn new() -> Self {
        Api { app: router(AppState::default()) }
    }

    async fn call(&self, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value) {
        let req = Request::builder().method(method).uri(uri);
        let req = match body {
            Some(b) => req.header("content-type", "application/json").body(Body::from(b)),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let v = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
        (status, v)
    }

    async fn ok(&self, method: &str, uri: &str, body: Option<Value>) -> Value {
        let (s, v) = self.call(method, uri, body.map(|b| b.to_string())).await;
        assert!(s.is_success(), "{method} {uri}: {s} {v}");
        assert_eq!(v["schema_version"], 1, "{v}");
        v
    }

    async fn model(&self, src: &str) -> String {
        let (s, v) = self.call("POST", "/models", Some(src.to_string())).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["id"].as_str().unwrap().to_string()
    }

    async fn session(&self, model: &str, engine: &str) -> String {
        let v = self.ok("POST", "/sessions", Some(json!({ "model": model, "engine": engine }))).await;
        v["id"].as_str().unwrap().to_string()
    }
}

fn probs(v: &Value) -> Vec<f64> {
    v["rows"].as_array().unwrap().iter().map(|r| r["p"].as_str().unwrap().parse().unwrap()).collect()
}

#[tokio::test]
async fn invalid_dsl_is_a_400_with_diagnostics() {
    let api = Api::new();
    let (s, v) = api.call("POST", "/models", Some("situation S { private A: ".into())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "E_PARSE");
    assert_eq!(v["schema_version"], 1);
    let d = v["diagnostics"].as_array().unwrap();
    assert!(!d.is_empty() && d[0]["code"] == "E_PARSE" && d[0]["line"].as_u64().unwrap() >= 1);

    let (s, v) = api.call("POST", "/models", Some("{\"source\": 7}".into())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "E_USAGE");
}

#[tokio::test]
async fn structure_shows_the_subnets() {
    let api = Api::new();
    let body = json!({ "source": corpus::accident_source() }).to_string();
    let (s, v) = api.call("POST", "/models", Some(body)).await;
    assert_eq!(s, StatusCode::CREATED);
    let id = v["id"].as_str().unwrap();
    let st = api.ok("GET", &format!("/models/{id}/structure"), None).await;
    let ht = &st["hypertree"];
    let top: Vec<&str> = ht["links"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|l| l[0] == "Situation")
        .map(|l| l[1].as_str().unwrap())
        .collect();
    assert_eq!(top, ["Situation.Driver", "Situation.Car", "Situation.Weather", "Situation.Road"]);
    assert_eq!(ht["subnets"].as_array().unwrap().len(), 10);
    let weather = ht["subnets"].as_array().unwrap().iter().find(|s| s["path"] == "Situation.Weather").unwrap();
    assert!(weather["exported"].as_array().unwrap().iter().any(|v| v == "Situation.Weather.Wetness"));
    assert!(st["objects"].as_array().unwrap().iter().any(|o| o["path"] == "Situation.Car" && o["class"] == "CAR"));
}

#[tokio::test]
async fn unknown_ids_are_404() {
    let api = Api::new();
    let (s, v) = api.call("GET", "/models/nope/structure", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(api.call("GET", "/sessions/nope/stats", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(api.call("GET", "/nowhere", None).await.0, StatusCode::NOT_FOUND);
    let (s, _) = api.call("POST", "/sessions", Some(json!({"model": "m99"}).to_string())).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn query_matches_cli_output() {
    let api = Api::new();
    let m = api.model(&corpus::accident_source()).await;
    let s = api.session(&m, "msbn").await;
    api.ok("POST", &format!("/sessions/{s}/evidence"), Some(json!({"path": "Driver.Age", "value": "0-20yr"}))).await;
    let mut http =
        api.ok("GET", &format!("/sessions/{s}/query?target=Damage&evidence=Road.Location%3Drural"), None).await;
    http.as_object_mut().unwrap().remove("stats");

    let mut sess = oobn::session::Session::new(corpus::accident(), Default::default()).unwrap();
    let ev = [("Driver.Age".to_string(), "0-20yr".to_string()), ("Road.Location".to_string(), "rural".to_string())];
    let cli = sess.query(&["Damage".into()], &ev).unwrap().to_json();
    assert_eq!(http, cli);

    // call-scoped evidence did not stick
    let ev = api.ok("GET", &format!("/sessions/{s}/evidence"), None).await;
    assert_eq!(ev["evidence"].as_array().unwrap().len(), 1);
    api.ok("DELETE", &format!("/sessions/{s}/evidence?path=Driver.Age"), None).await;
    let ev = api.ok("GET", &format!("/sessions/{s}/evidence"), None).await;
    assert!(ev["evidence"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn engines_agree_over_http() {
    let api = Api::new();
    let m = api.model(&corpus::accident_source()).await;
    let a = api.session(&m, "msbn").await;
    let b = api.session(&m, "flat").await;
    let uri = |s: &str| format!("/sessions/{s}/query?target=Damage&target=Weather.Wetness&evidence=Driver.Gender%3Dmale");
    let pa = probs(&api.ok("GET", &uri(&a), None).await);
    let pb = probs(&api.ok("GET", &uri(&b), None).await);
    assert_eq!(pa.len(), pb.len());
    assert!(pa.iter().zip(&pb).all(|(x, y)| (x - y).abs() < 1e-9));
}

#[tokio::test]
async fn user_errors_are_400_and_zero_prob_is_409() {
    let api = Api::new();
    let src = "type B = {t, f}; situation S { private A: B { 0.3 0.7 } private C: B given (a: B) { (t): 1 0; (f): 0 1; } C.a <- A; }";
    let m = api.model(src).await;
    let s = api.session(&m, "msbn").await;
    let ev = format!("/sessions/{s}/evidence");
    api.ok("POST", &ev, Some(json!({"path": "A", "value": "t"}))).await;
    let (st, v) = api.call("POST", &ev, Some(json!({"path": "C", "value": "f"}).to_string())).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(v["error"], "E_ZERO_PROB");
    let q = api.ok("GET", &format!("/sessions/{s}/query?target=C"), None).await;
    assert_eq!(probs(&q), [1.0, 0.0]);

    for (method, uri, body) in [
        ("POST", ev.clone(), Some("not json".to_string())),
        ("POST", ev.clone(), Some(json!({"path": "A"}).to_string())),
        ("POST", ev.clone(), Some(json!({"path": "A", "value": "maybe"}).to_string())),
        ("POST", ev.clone(), Some(json!({"path": "Z.Q", "value": "t"}).to_string())),
        ("DELETE", ev.clone(), None),
        ("GET", format!("/sessions/{s}/query"), None),
        ("GET", format!("/sessions/{s}/query?target=A&color=red"), None),
        ("GET", format!("/sessions/{s}/query?target=A&evidence=A"), None),
        ("GET", format!("/sessions/{s}/query?target=%FF%FE"), None),
        ("POST", format!("/sessions/{s}/refine"), Some(json!({"kind": "EXPLODE", "path": "A"}).to_string())),
        ("POST", format!("/sessions/{s}/refine"), Some(json!({"kind": "ICONIZE", "path": "A"}).to_string())),
        ("POST", "/sessions".to_string(), Some(json!({"model": m, "engine": "quantum"}).to_string())),
        ("POST", "/models".to_string(), Some("\u{0}\u{1}garbage".to_string())),
    ] {
        let (st, v) = api.call(method, &uri, body.clone()).await;
        assert_eq!(st, StatusCode::BAD_REQUEST, "{method} {uri} {body:?}: {v}");
        assert!(v["error"].as_str().unwrap().starts_with("E_"));
    }
}

#[tokio::test]
async fn refinement_reports_locality() {
    let api = Api::new();
    let m = api.model(&corpus::subclass_source()).await;
    let s = api.session(&m, "msbn").await;
    let refine = format!("/sessions/{s}/refine");
    let comp = api.ok("GET", &format!("/sessions/{s}/compatible?path=Car"), None).await;
    assert!(comp["classes"].as_array().unwrap().iter().any(|c| c == "SPORTS-CAR"));

    api.ok("POST", &refine, Some(json!({"kind": "ICONIZE", "path": "Car"}))).await;
    let v = api.ok("POST", &refine, Some(json!({"kind": "SUBSTITUTE", "path": "Car", "class": "SPORTS-CAR"}))).await;
    assert_eq!(v["locality"]["rebuilt_inside"], 0);
    let v = api.ok("POST", &refine, Some(json!({"kind": "DEICONIZE", "path": "Car"}))).await;
    for p in v["locality"]["rebuilt"].as_array().unwrap() {
        assert!(p.as_str().unwrap().starts_with("Situation.Car"), "{p}");
    }
    let st = api.ok("GET", &format!("/sessions/{s}/structure"), None).await;
    let car = st["objects"].as_array().unwrap().iter().find(|o| o["path"] == "Situation.Car").unwrap().clone();
    assert_eq!(car["class"], "SPORTS-CAR");
    assert!(st["hypertree"]["subnets"].as_array().unwrap().iter().any(|x| x["path"] == "Situation.Car.Engine"));

    let stats = api.ok("GET", &format!("/sessions/{s}/stats"), None).await;
    assert!(stats["lifetime_cells"].is_object());
    let log = api.ok("GET", &format!("/sessions/{s}/log"), None).await;
    let ops: Vec<&str> = log["log"].as_array().unwrap().iter().map(|e| e["op"].as_str().unwrap()).collect();
    assert_eq!(ops, ["load", "refine", "refine", "refine"]);
}

#[tokio::test]
async fn sessions_run_concurrently() {
    let api = std::sync::Arc::new(Api::new());
    let m = api.model(&corpus::accident_source()).await;
    let mut handles = Vec::new();
    for i in 0..4 {
        let api = api.clone();
        let m = m.clone();
        handles.push(tokio::spawn(async move {
            let s = api.session(&m, if i % 2 == 0 { "msbn" } else { "flat" }).await;
            probs(&api.ok("GET", &format!("/sessions/{s}/query?target=Damage"), None).await)
        }));
    }
    let mut all = Vec::new();
    for h in handles {
        all.push(h.await.unwrap());
    }
    for p in &all[1..] {
        assert!(p.iter().zip(&all[0]).all(|(x, y)| (x - y).abs() < 1e-9));
    }
    let s = api.session(&m, "msbn").await;
    let (st, _) = api.call("DELETE", &format!("/sessions/{s}"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(api.call("GET", &format!("/sessions/{s}"), None).await.0, StatusCode::NOT_FOUND);
}
