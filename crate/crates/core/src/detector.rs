//! Detector abstraction shared by built-in and remote detectors.
//!
//! The gateway only ever sees [`Detector`] trait objects plus a
//! [`DetectorDescriptor`]; whether the work happens in-process or behind an
//! HTTP endpoint is invisible to it. Failures never escape [`detect`]: they
//! are folded into [`DetectorStatus`].

use std::collections::BTreeSet;
use std::panic::AssertUnwindSafe;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Finding, Span};

pub const DEFAULT_TIMEOUT_MS: u64 = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DetectorKind {
    Classification,
    Extraction,
    Comparison,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailMode {
    FailOpen,
    FailClosed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorDescriptor {
    pub detector_id: String,
    pub kind: DetectorKind,
    pub categories: BTreeSet<String>,
    pub timeout_ms: u64,
    pub fail_mode: FailMode,
}

impl DetectorDescriptor {
    pub fn new<I, S>(detector_id: impl Into<String>, kind: DetectorKind, categories: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        DetectorDescriptor {
            detector_id: detector_id.into(),
            kind,
            categories: categories.into_iter().map(Into::into).collect(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
            fail_mode: FailMode::FailOpen,
        }
    }

    pub fn with_timeout_ms(mut self, timeout_ms: u64) -> Self {
        self.timeout_ms = timeout_ms;
        self
    }

    pub fn with_fail_mode(mut self, fail_mode: FailMode) -> Self {
        self.fail_mode = fail_mode;
        self
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DetectorStatus {
    Ok,
    Timeout,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorResult {
    pub detector_id: String,
    pub findings: Vec<Finding>,
    pub elapsed_ms: f64,
    pub status: DetectorStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl DetectorResult {
    pub fn ok(detector_id: &str, findings: Vec<Finding>, elapsed: Duration) -> Self {
        DetectorResult {
            detector_id: detector_id.to_string(),
            findings,
            elapsed_ms: elapsed.as_secs_f64() * 1000.0,
            status: DetectorStatus::Ok,
            error: None,
        }
    }

    pub fn failed(
        detector_id: &str,
        status: DetectorStatus,
        elapsed: Duration,
        error: impl Into<String>,
    ) -> Self {
        DetectorResult {
            detector_id: detector_id.to_string(),
            findings: Vec::new(),
            elapsed_ms: elapsed.as_secs_f64() * 1000.0,
            status,
            error: Some(error.into()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == DetectorStatus::Ok
    }
}

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("detector timed out: {0}")]
    Timeout(String),
    #[error("detector failed: {0}")]
    Failed(String),
}

/// A stateless risk detector. Implementations must be safe to call from many
/// threads at once and must not keep per-call mutable shared state.
pub trait Detector: Send + Sync {
    fn detect(&self, text: &str, request_id: &str) -> Result<Vec<Finding>, DetectorError>;
}

impl<F> Detector for F
where
    F: Fn(&str) -> Result<Vec<Finding>, DetectorError> + Send + Sync,
{
    fn detect(&self, text: &str, _request_id: &str) -> Result<Vec<Finding>, DetectorError> {
        self(text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("DUPLICATE_DETECTOR_ID: `{0}` is already registered")]
    DuplicateDetectorId(String),
    #[error("detector `{0}` has a zero timeout")]
    ZeroTimeout(String),
}

#[derive(Clone)]
pub struct RegisteredDetector {
    pub descriptor: DetectorDescriptor,
    pub detector: Arc<dyn Detector>,
}

/// Insertion-ordered set of detectors keyed by id.
#[derive(Clone, Default)]
pub struct Registry {
    entries: Vec<RegisteredDetector>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        descriptor: DetectorDescriptor,
        detector: Arc<dyn Detector>,
    ) -> Result<(), RegistryError> {
        if self.get(&descriptor.detector_id).is_some() {
            return Err(RegistryError::DuplicateDetectorId(descriptor.detector_id));
        }
        if descriptor.timeout_ms == 0 {
            return Err(RegistryError::ZeroTimeout(descriptor.detector_id));
        }
        self.entries.push(RegisteredDetector {
            descriptor,
            detector,
        });
        Ok(())
    }

    pub fn get(&self, detector_id: &str) -> Option<&RegisteredDetector> {
        self.entries
            .iter()
            .find(|e| e.descriptor.detector_id == detector_id)
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &DetectorDescriptor> {
        self.entries.iter().map(|e| &e.descriptor)
    }

    pub fn iter(&self) -> impl Iterator<Item = &RegisteredDetector> {
        self.entries.iter()
    }

    pub fn ids(&self) -> Vec<String> {
        self.descriptors().map(|d| d.detector_id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn run_guarded(
    detector: &dyn Detector,
    text: &str,
    request_id: &str,
) -> Result<Vec<Finding>, DetectorError> {
    match std::panic::catch_unwind(AssertUnwindSafe(|| detector.detect(text, request_id))) {
        Ok(result) => result,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            Err(DetectorError::Failed(format!("detector panicked: {msg}")))
        }
    }
}

fn into_result(
    descriptor: &DetectorDescriptor,
    outcome: Result<Vec<Finding>, DetectorError>,
    text_len: usize,
    elapsed: Duration,
) -> DetectorResult {
    let id = &descriptor.detector_id;
    match outcome {
        Ok(findings) => {
            if let Some(bad) = findings.iter().find(|f| !f.is_well_formed(text_len)) {
                return DetectorResult::failed(
                    id,
                    DetectorStatus::Error,
                    elapsed,
                    format!("malformed finding {bad:?}"),
                );
            }
            DetectorResult::ok(id, findings, elapsed)
        }
        Err(DetectorError::Timeout(msg)) => {
            DetectorResult::failed(id, DetectorStatus::Timeout, elapsed, msg)
        }
        Err(DetectorError::Failed(msg)) => {
            DetectorResult::failed(id, DetectorStatus::Error, elapsed, msg)
        }
    }
}

/// Runs one detector under its descriptor's timeout.
///
/// The detector body executes on the blocking thread pool; if the deadline
/// passes first the result is `TIMEOUT` and the late output is discarded.
/// A panic or returned error becomes `ERROR`. The optional semaphore bounds
/// how many detector bodies run at once; time spent waiting for a permit
/// counts against the deadline.
pub async fn detect(
    descriptor: &DetectorDescriptor,
    detector: Arc<dyn Detector>,
    text: Arc<str>,
    request_id: Arc<str>,
    pool: Option<Arc<tokio::sync::Semaphore>>,
) -> DetectorResult {
    let started = Instant::now();
    let text_len = text.chars().count();
    let work = async move {
        let permit = match pool {
            Some(sem) => Some(
                sem.acquire_owned()
                    .await
                    .map_err(|_| DetectorError::Failed("worker pool closed".into()))?,
            ),
            None => None,
        };
        let handle = tokio::task::spawn_blocking(move || {
            let _permit = permit;
            run_guarded(detector.as_ref(), &text, &request_id)
        });
        handle
            .await
            .map_err(|e| DetectorError::Failed(format!("detector task aborted: {e}")))?
    };
    let outcome = match tokio::time::timeout(descriptor.timeout(), work).await {
        Ok(outcome) => outcome,
        Err(_) => Err(DetectorError::Timeout(format!(
            "no result within {} ms",
            descriptor.timeout_ms
        ))),
    };
    into_result(descriptor, outcome, text_len, started.elapsed())
}

/// Synchronous variant of [`detect`] for callers without a runtime.
pub fn detect_blocking(
    descriptor: &DetectorDescriptor,
    detector: Arc<dyn Detector>,
    text: &str,
) -> DetectorResult {
    let started = Instant::now();
    let text_len = text.chars().count();
    let (tx, rx) = std::sync::mpsc::channel();
    let owned = text.to_string();
    std::thread::spawn(move || {
        let _ = tx.send(run_guarded(detector.as_ref(), &owned, ""));
    });
    let outcome = match rx.recv_timeout(descriptor.timeout()) {
        Ok(outcome) => outcome,
        Err(std::sync::mpsc::RecvTimeoutError::Timeout) => Err(DetectorError::Timeout(format!(
            "no result within {} ms",
            descriptor.timeout_ms
        ))),
        Err(std::sync::mpsc::RecvTimeoutError::Disconnected) => {
            Err(DetectorError::Failed("detector thread vanished".into()))
        }
    };
    into_result(descriptor, outcome, text_len, started.elapsed())
}

/// Request body of `POST /detect` on a remote detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteDetectRequest {
    pub text: String,
    pub request_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteFinding {
    pub category: String,
    pub label: String,
    pub score: f64,
    #[serde(default)]
    pub span: Option<Span>,
    #[serde(default)]
    pub evidence: Option<String>,
}

/// Response body of `POST /detect` on a remote detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteDetectResponse {
    pub detector_id: String,
    pub findings: Vec<RemoteFinding>,
}

/// Client for a detector served over HTTP.
pub struct RemoteDetector {
    detector_id: String,
    url: String,
    agent: ureq::Agent,
}

impl RemoteDetector {
    /// `endpoint` is the base URL; `/detect` is appended unless already present.
    pub fn new(detector_id: impl Into<String>, endpoint: &str, timeout: Duration) -> Self {
        let url = if endpoint.trim_end_matches('/').ends_with("/detect") {
            endpoint.to_string()
        } else {
            format!("{}/detect", endpoint.trim_end_matches('/'))
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteDetector {
            detector_id: detector_id.into(),
            url,
            agent,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Detector for RemoteDetector {
    fn detect(&self, text: &str, request_id: &str) -> Result<Vec<Finding>, DetectorError> {
        let body = RemoteDetectRequest {
            text: text.to_string(),
            request_id: request_id.to_string(),
        };
        let mut response = self
            .agent
            .post(&self.url)
            .send_json(&body)
            .map_err(|e| match e {
                ureq::Error::Timeout(t) => DetectorError::Timeout(format!("{t:?}")),
                other => DetectorError::Failed(other.to_string()),
            })?;
        if response.status() != 200 {
            return Err(DetectorError::Failed(format!(
                "remote detector returned HTTP {}",
                response.status()
            )));
        }
        let parsed: RemoteDetectResponse = response.body_mut().read_json().map_err(|e| match e {
            ureq::Error::Timeout(t) => DetectorError::Timeout(format!("{t:?}")),
            other => DetectorError::Failed(format!("malformed response: {other}")),
        })?;
        Ok(parsed
            .findings
            .into_iter()
            .map(|f| Finding {
                detector_id: self.detector_id.clone(),
                category: f.category,
                span: f.span,
                score: f.score,
                label: f.label,
                sensitivity: None,
                evidence: f.evidence,
            })
            .collect())
    }
}

/// One detect call against a remote endpoint, with failures encoded in the status.
pub fn remote_detect(endpoint: &str, text: &str, timeout_ms: u64) -> DetectorResult {
    let descriptor = DetectorDescriptor::new("remote", DetectorKind::Classification, [""; 0])
        .with_timeout_ms(timeout_ms.max(1));
    remote_detect_with(&descriptor, endpoint, text)
}

pub fn remote_detect_with(
    descriptor: &DetectorDescriptor,
    endpoint: &str,
    text: &str,
) -> DetectorResult {
    let started = Instant::now();
    let client = RemoteDetector::new(&descriptor.detector_id, endpoint, descriptor.timeout());
    let outcome = client.detect(text, &uuid::Uuid::new_v4().to_string());
    let outcome = match outcome {
        Ok(_) if started.elapsed() > descriptor.timeout() => Err(DetectorError::Timeout(format!(
            "no result within {} ms",
            descriptor.timeout_ms
        ))),
        other => other,
    };
    into_result(descriptor, outcome, text.chars().count(), started.elapsed())
}
