use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use shieldgate::config::Config;
use shieldgate::detector::RemoteDetectRequest;

async fn call(method: &'static str, url: String, body: Option<String>) -> (u16, Value) {
    tokio::task::spawn_blocking(move || {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        let resp = match (method, body) {
            ("GET", _) => agent.get(&url).call(),
            ("DELETE", _) => agent.delete(&url).call(),
            ("POST", Some(b)) => agent.post(&url).header("content-type", "application/json").send(b),
            ("PUT", Some(b)) => agent.put(&url).send(b),
            _ => unreachable!(),
        };
        let mut resp = resp.unwrap();
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    })
    .await
    .unwrap()
}

async fn remote_mock() -> String {
    let app = Router::new()
        .route(
            "/good/detect",
            post(|Json(req): Json<RemoteDetectRequest>| async move {
                let findings = if req.text.contains("launch code") {
                    json!([{"category": "ext.secret", "label": "launch code", "score": 0.97, "span": null, "evidence": null}])
                } else {
                    json!([])
                };
                Json(json!({"detector_id": "good", "findings": findings}))
            }),
        )
        .route("/broken/detect", post(|| async { "not json" }));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await });
    format!("http://{addr}")
}

const SECRET_POLICY: &str = r#"policy_id = "secrets"
default_action = "PASS"

[[rules]]
id = "block-secrets"
when = 'category == "ext.*" AND score >= 0.5'
action = "BLOCK"
"#;

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn gateway_over_http_with_remote_detectors() {
    let mock = remote_mock().await;
    let raw = format!(
        r#"
listen = "127.0.0.1:0"

[[detectors]]
id = "pii"
type = "pii"

[[detectors]]
id = "good"
type = "remote"
endpoint = "{mock}/good"
categories = ["ext.secret"]

[[detectors]]
id = "broken"
type = "remote"
endpoint = "{mock}/broken"
categories = ["ext.other"]
"#
    );
    let cfg = Config::from_toml(&raw, ".").unwrap();
    let server = shieldgate::server::serve(&cfg).await.unwrap();
    let base = format!("http://{}", server.addr);

    let (status, health) = call("GET", format!("{base}/v1/health"), None).await;
    assert_eq!(status, 200);
    assert_eq!(health["status"], "ready");

    let (status, v) = call(
        "POST",
        format!("{base}/v1/shield/prompt"),
        Some(json!({"text": "My SSN is 123-45-6789.", "detectors": ["pii"]}).to_string()),
    )
    .await;
    assert_eq!(status, 200, "{v}");
    assert_eq!(v["decision"], "MASK");
    assert_eq!(v["output_text"], "My SSN is [SSN].");

    let (status, _) = call("PUT", format!("{base}/policies/secrets"), Some(SECRET_POLICY.into())).await;
    assert_eq!(status, 201);
    let (status, _) = call("PUT", format!("{base}/policies/secrets"), Some(SECRET_POLICY.into())).await;
    assert_eq!(status, 200);
    let (status, err) = call("PUT", format!("{base}/policies/other"), Some(SECRET_POLICY.into())).await;
    assert_eq!((status, err["error"].as_str()), (400, Some("POLICY_ID_MISMATCH")));

    let body = json!({"text": "the launch code is 0000", "policy_ids": ["secrets"], "detectors": ["good"]});
    let (status, v) = call("POST", format!("{base}/v1/shield/response"), Some(body.to_string())).await;
    assert_eq!(status, 200, "{v}");
    assert_eq!(v["decision"], "BLOCK");
    assert_eq!(v["findings"][0]["detector_id"], "good");

    let body = json!({"text": "nothing to see", "policy_ids": ["secrets"]});
    let (_, v) = call("POST", format!("{base}/v1/shield/prompt"), Some(body.to_string())).await;
    assert_eq!(v["degraded"], json!(["broken"]));
    assert_eq!(v["decision"], "BLOCK", "malformed remote output fails closed under a blocking policy");

    let body = json!({"text": "nothing to see"});
    let (_, v) = call("POST", format!("{base}/v1/shield/prompt"), Some(body.to_string())).await;
    assert_eq!(v["degraded"], json!(["broken"]));
    assert_eq!(v["decision"], "PASS");

    let (status, _) = call("DELETE", format!("{base}/policies/secrets"), None).await;
    assert_eq!(status, 204);
    let (status, _) = call("GET", format!("{base}/policies/secrets"), None).await;
    assert_eq!(status, 404);

    let (status, err) = call("POST", format!("{base}/v1/shield/prompt"), Some(json!({"text": ""}).to_string())).await;
    assert_eq!((status, err["error"].as_str()), (400, Some("EMPTY_TEXT")));

    server.shutdown().await.unwrap();
}
