mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use common::{fast_settings, request, workspace};
use upho_core::graphstore::GraphDocument;
use upho_gateway::metrics::MetricsDocument;
use upho_gateway::report::AnalysisReport;
use upho_gateway::server::{router, AppState};

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

async fn post(app: &Router, name: &str) -> (StatusCode, Value) {
    let body = serde_json::to_string(&request(name)).unwrap();
    let (s, b) = call(app, "POST", "/analyses", Some(body)).await;
    (s, json(&b))
}

#[tokio::test]
async fn health() {
    let (_d, ws) = workspace();
    let app = router(AppState::new(ws, fast_settings()));
    let (s, b) = call(&app, "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(json(&b)["status"], "ok");
}

#[tokio::test]
async fn patient_analysis_resources() {
    let (_d, ws) = workspace();
    let app = router(AppState::new(ws, fast_settings()));
    let (s, created) = post(&app, "patient_tract_10300.json").await;
    assert_eq!(s, StatusCode::CREATED);
    let id = created["id"].as_str().unwrap().to_string();

    let (s, b) = call(&app, "GET", &format!("/analyses/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    let report: AnalysisReport = serde_json::from_slice(&b).unwrap();
    assert_eq!(report.id, id);
    assert!(report.timings.is_some());

    let (s, b) = call(&app, "GET", &format!("/analyses/{id}/graph"), None).await;
    assert_eq!(s, StatusCode::OK);
    let doc: GraphDocument = serde_json::from_slice(&b).unwrap();
    assert_eq!(doc, report.graph);

    let (s, b) = call(&app, "GET", &format!("/analyses/{id}/pathways"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(json(&b).as_array().unwrap().len(), report.pathways.len());

    let edge = &report.graph.edges[0].id;
    let (s, b) = call(&app, "GET", &format!("/analyses/{id}/explain/edge/{edge}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(json(&b)["target"], edge.as_str());
    let node = "metric:47157010300:poverty";
    let (s, phys) = call(&app, "GET", &format!("/analyses/{id}/explain/node/{node}?role=physician"), None).await;
    assert_eq!(s, StatusCode::OK);
    let (_, res) = call(&app, "GET", &format!("/analyses/{id}/explain/node/{node}?role=researcher"), None).await;
    assert_ne!(json(&phys)["text"], json(&res)["text"], "roles get different wording");

    for uri in [
        format!("/analyses/{id}"),
        format!("/analyses/{id}/graph"),
        format!("/analyses/{id}/explain/node/{node}"),
    ] {
        let (s, b) = call(&app, "GET", &format!("{uri}?role=public"), None).await;
        assert_eq!(s, StatusCode::FORBIDDEN, "{uri}");
        assert_eq!(json(&b)["kind"], "forbidden");
    }
    let (s, _) = call(&app, "GET", &format!("/analyses/{id}/explain/node/nope"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "GET", &format!("/analyses/{id}?role=mayor"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    // Posting the same request again yields the same id.
    let (s, again) = post(&app, "patient_tract_10300.json").await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(again["id"], created["id"]);
}

#[tokio::test]
async fn errors_map_to_statuses() {
    let (_d, ws) = workspace();
    let app = router(AppState::new(ws, fast_settings()));
    let (s, b) = post(&app, "unknown_tract.json").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!((b["stage"].as_str(), b["kind"].as_str()), (Some("request"), Some("not_found")));
    assert!(b["error"].as_str().unwrap().contains("UnknownTract"));
    let (s, _) = post(&app, "public_patient.json").await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, b) = call(&app, "POST", "/analyses", Some("{\"outcome\": 1}".into())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(json(&b)["stage"], "request");
    let (s, _) = call(&app, "POST", "/analyses", Some("{\"outcome\":\"obesity\",\"level\":\"patient\",\"location\":\"47157010300\",\"extra\":1}".into())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "GET", &format!("/analyses/{}", "a".repeat(64)), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "GET", "/analyses/not-an-id/graph", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn population_analysis_is_public_and_feeds_metrics() {
    let (_d, ws) = workspace();
    let app = router(AppState::new(ws, fast_settings()));
    let (s, created) = post(&app, "population_city.json").await;
    assert_eq!(s, StatusCode::CREATED);
    let id = created["id"].as_str().unwrap();
    let (s, _) = call(&app, "GET", &format!("/analyses/{id}/graph?role=public"), None).await;
    assert_eq!(s, StatusCode::OK);

    let (s, b) = call(&app, "GET", "/metrics/47157010300?role=public", None).await;
    assert_eq!(s, StatusCode::OK);
    let m: MetricsDocument = serde_json::from_slice(&b).unwrap();
    assert_eq!(m.zip.as_deref(), Some("38127"));
    assert_eq!(m.city, "Memphis");
    let pov = m.metrics.iter().find(|v| v.column == "poverty").unwrap();
    assert_eq!(pov.value, 60.0);
    assert!(pov.percentile > 90.0 && pov.percentile <= 100.0);
    assert_eq!(m.risk.len(), 1);
    assert_eq!(m.risk[0].analysis, id);

    let (s, _) = call(&app, "GET", "/metrics/47157999900", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "GET", "/metrics/123", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}
