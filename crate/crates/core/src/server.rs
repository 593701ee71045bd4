//! HTTP front end.
//!
//! | method | path                  | body / result                         |
//! |--------|-----------------------|---------------------------------------|
//! | POST   | `/v1/shield/prompt`   | [`ShieldBody`] → [`Verdict`]          |
//! | POST   | `/v1/shield/response` | [`ShieldBody`] → [`Verdict`]          |
//! | GET    | `/v1/health`          | `{"status": "ready", ...}`            |
//! | GET    | `/policies`           | list of [`PolicySummary`]             |
//! | GET    | `/policies/{id}`      | [`PolicySummary`] plus `source`       |
//! | PUT    | `/policies/{id}`      | policy TOML → [`PolicySummary`]       |
//! | DELETE | `/policies/{id}`      | 204                                   |
//!
//! Errors are `{"error": CODE, "message": ...}` with a 4xx status.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::oneshot;

use crate::config::{Config, ConfigError};
use crate::gateway::{Gateway, GatewayError};
use crate::model::{Direction, ShieldRequest, Verdict};
use crate::policy::{PolicyError, PolicySummary};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ShieldBody {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tenant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jurisdiction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detectors: Option<Vec<String>>,
}

impl ShieldBody {
    pub fn into_request(self, direction: Direction) -> ShieldRequest {
        let mut req = ShieldRequest::new(self.text, direction);
        if let Some(id) = self.request_id {
            req.request_id = id;
        }
        if let Some(t) = self.tenant {
            req.tenant = t;
        }
        if let Some(j) = self.jurisdiction {
            req.jurisdiction = j;
        }
        if let Some(p) = self.policy_ids {
            req.policy_ids = p;
        }
        req.detector_allowlist = self.detectors;
        req
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError(
            status,
            ErrorBody {
                error: code.to_string(),
                message: message.into(),
            },
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        let status = match e {
            GatewayError::Validation(crate::model::ValidationError::UnknownPolicyId(_)) => {
                StatusCode::NOT_FOUND
            }
            GatewayError::NoDetectorsApplicable => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<PolicyError> for ApiError {
    fn from(e: PolicyError) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, e.kind.code(), e.to_string())
    }
}

async fn shield(
    gateway: Arc<Gateway>,
    direction: Direction,
    body: ShieldBody,
) -> Result<Json<Verdict>, ApiError> {
    let verdict = gateway.shield(body.into_request(direction)).await?;
    Ok(Json(verdict))
}

async fn shield_prompt(
    State(g): State<Arc<Gateway>>,
    Json(body): Json<ShieldBody>,
) -> Result<Json<Verdict>, ApiError> {
    shield(g, Direction::Prompt, body).await
}

async fn shield_response(
    State(g): State<Arc<Gateway>>,
    Json(body): Json<ShieldBody>,
) -> Result<Json<Verdict>, ApiError> {
    shield(g, Direction::Response, body).await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub detectors: Vec<String>,
    pub policies: Vec<String>,
}

async fn health(State(g): State<Arc<Gateway>>) -> Json<Health> {
    Json(Health {
        status: "ready".to_string(),
        detectors: g.registry().ids(),
        policies: g.policies().ids(),
    })
}

async fn list_policies(State(g): State<Arc<Gateway>>) -> Json<Vec<PolicySummary>> {
    Json(g.policies().templates().map(|t| t.summary()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDocument {
    #[serde(flatten)]
    pub summary: PolicySummary,
    pub source: String,
}

fn not_found(id: &str) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", format!("no policy `{id}`"))
}

async fn get_policy(
    State(g): State<Arc<Gateway>>,
    Path(id): Path<String>,
) -> Result<Json<PolicyDocument>, ApiError> {
    let set = g.policies();
    let t = set.get(&id).ok_or_else(|| not_found(&id))?;
    Ok(Json(PolicyDocument {
        summary: t.summary(),
        source: t.source.clone(),
    }))
}

async fn put_policy(
    State(g): State<Arc<Gateway>>,
    Path(id): Path<String>,
    body: String,
) -> Result<(StatusCode, Json<PolicySummary>), ApiError> {
    g.update_policies(|set| {
        let template = crate::policy::PolicyTemplate::from_toml(&body, set.catalog())?;
        if template.policy_id != id {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "POLICY_ID_MISMATCH",
                format!("document defines `{}` but was sent to `{id}`", template.policy_id),
            ));
        }
        let status = if set.contains(&id) {
            StatusCode::OK
        } else {
            StatusCode::CREATED
        };
        let summary = set.insert_toml(&body)?.summary();
        tracing::info!(policy = %id, "policy stored");
        Ok((status, Json(summary)))
    })
}

async fn delete_policy(
    State(g): State<Arc<Gateway>>,
    Path(id): Path<String>,
) -> Result<StatusCode, ApiError> {
    g.update_policies(|set| match set.remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(not_found(&id)),
    })
}

pub fn router(gateway: Arc<Gateway>) -> Router {
    Router::new()
        .route("/v1/shield/prompt", post(shield_prompt))
        .route("/v1/shield/response", post(shield_response))
        .route("/v1/health", get(health))
        .route("/policies", get(list_policies))
        .route(
            "/policies/{id}",
            get(get_policy).put(put_policy).delete(delete_policy),
        )
        .with_state(gateway)
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("BIND_FAILURE: {addr}: {source}")]
    BindFailure {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

impl ServeError {
    pub fn code(&self) -> &'static str {
        match self {
            ServeError::BindFailure { .. } => "BIND_FAILURE",
            ServeError::Config(_) => "CONFIG_INVALID",
            ServeError::Io(_) => "IO_FAILURE",
        }
    }
}

/// A running server. Dropping the handle leaves the server running.
pub struct ServerHandle {
    pub addr: SocketAddr,
    pub gateway: Arc<Gateway>,
    shutdown: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl ServerHandle {
    /// Stops accepting connections and waits for in-flight requests.
    pub async fn shutdown(mut self) -> Result<(), ServeError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.wait().await
    }

    pub async fn wait(self) -> Result<(), ServeError> {
        match self.task.await {
            Ok(r) => r.map_err(ServeError::Io),
            Err(e) => Err(ServeError::Io(std::io::Error::other(e))),
        }
    }
}

/// Binds `listen` and serves `gateway` in a background task.
pub async fn start(gateway: Arc<Gateway>, listen: &str) -> Result<ServerHandle, ServeError> {
    let listener = tokio::net::TcpListener::bind(listen)
        .await
        .map_err(|source| ServeError::BindFailure {
            addr: listen.to_string(),
            source,
        })?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(gateway.clone());
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    tracing::info!(%addr, "listening");
    Ok(ServerHandle {
        addr,
        gateway,
        shutdown: Some(tx),
        task,
    })
}

/// Builds the gateway described by `config` and starts serving it.
pub async fn serve(config: &Config) -> Result<ServerHandle, ServeError> {
    let gateway = Arc::new(config.build_gateway()?);
    start(gateway, &config.listen).await
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicySet;

    async fn call(
        method: &'static str,
        url: String,
        body: Option<String>,
    ) -> (u16, String) {
        tokio::task::spawn_blocking(move || {
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .http_status_as_error(false)
                .build()
                .into();
            let resp = match (method, body) {
                ("GET", _) => agent.get(&url).call(),
                ("DELETE", _) => agent.delete(&url).call(),
                ("POST", Some(b)) => agent
                    .post(&url)
                    .header("content-type", "application/json")
                    .send(b),
                ("PUT", Some(b)) => agent.put(&url).send(b),
                _ => unreachable!(),
            }
            .unwrap();
            let status = resp.status().as_u16();
            (status, resp.into_body().read_to_string().unwrap_or_default())
        })
        .await
        .unwrap()
    }

    async fn running() -> ServerHandle {
        let cfg = Config::from_toml("listen = \"127.0.0.1:0\"", ".").unwrap();
        serve(&cfg).await.unwrap()
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 4)]
    async fn health_and_shield() {
        let h = running().await;
        let base = format!("http://{}", h.addr);
        let (status, body) = call("GET", format!("{base}/v1/health"), None).await;
        assert_eq!(status, 200);
        let health: Health = serde_json::from_str(&body).unwrap();
        assert_eq!(health.status, "ready");

        let req = serde_json::json!({"text": "Mail me at jane.doe@example.com please."}).to_string();
        let (status, body) = call("POST", format!("{base}/v1/shield/prompt"), Some(req)).await;
        assert_eq!(status, 200, "{body}");
        let v: Verdict = serde_json::from_str(&body).unwrap();
        assert_eq!(v.decision, crate::model::Decision::Mask);
        assert_eq!(v.output_text, "Mail me at [EMAIL_ADDRESS] please.");
        assert_eq!(v.timings.len(), 2);

        let req = serde_json::json!({"text": "  "}).to_string();
        let (status, body) = call("POST", format!("{base}/v1/shield/response"), Some(req)).await;
        assert_eq!(status, 400);
        assert!(body.contains("EMPTY_TEXT"));
        h.shutdown().await.unwrap();
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 4)]
    async fn policy_management() {
        let h = running().await;
        let base = format!("http://{}", h.addr);
        let (status, body) = call("GET", format!("{base}/policies"), None).await;
        assert_eq!(status, 200);
        let list: Vec<PolicySummary> = serde_json::from_str(&body).unwrap();
        assert_eq!(list.len(), 3);

        let doc = "policy_id = \"mine\"\ndefault_action = \"WARN\"\n[[rules]]\nid = \"a\"\nwhen = 'score > 0.5'\naction = \"BLOCK\"\n";
        let (status, _) = call("PUT", format!("{base}/policies/mine"), Some(doc.into())).await;
        assert_eq!(status, 201);
        let (status, body) = call("GET", format!("{base}/policies/mine"), None).await;
        assert_eq!(status, 200);
        let got: PolicyDocument = serde_json::from_str(&body).unwrap();
        assert_eq!(got.source, doc);

        let (status, body) = call("PUT", format!("{base}/policies/other"), Some(doc.into())).await;
        assert_eq!(status, 400);
        assert!(body.contains("POLICY_ID_MISMATCH"));
        let bad = doc.replace("score > 0.5", "score >");
        let (status, body) = call("PUT", format!("{base}/policies/mine"), Some(bad)).await;
        assert_eq!(status, 400);
        assert!(body.contains("MALFORMED_PREDICATE"));

        let (status, _) = call("DELETE", format!("{base}/policies/mine"), None).await;
        assert_eq!(status, 204);
        let (status, _) = call("GET", format!("{base}/policies/mine"), None).await;
        assert_eq!(status, 404);
        h.shutdown().await.unwrap();
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 2)]
    async fn port_in_use() {
        let h = running().await;
        let g = Arc::new(Gateway::new(PolicySet::builtin()));
        let err = start(g, &h.addr.to_string()).await.err().unwrap();
        assert_eq!(err.code(), "BIND_FAILURE");
        h.shutdown().await.unwrap();
    }
}
