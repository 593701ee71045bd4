//! Orchestrator: validates a request, fans it out to every applicable
//! detector at once, waits for all of them, then hands the pooled findings
//! to the policy manager.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::{Arc, Mutex, OnceLock, RwLock};
use std::time::{Instant, SystemTime};

use thiserror::Error;
use tokio::sync::Semaphore;

use crate::detector::{self, DetectorDescriptor, DetectorResult, FailMode, Registry, RegistryError};
use crate::model::{Direction, ShieldRequest, ValidationError, Verdict};
use crate::policy::{EvaluationError, EvaluationInput, PolicySet};

pub const DEFAULT_ORCHESTRATOR_WORKERS: usize = 40;
pub const DEFAULT_DETECTOR_WORKERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("{code}: {err}", code = .0.code(), err = .0)]
    Validation(#[from] ValidationError),
    #[error("NO_DETECTORS_APPLICABLE: no registered detector is in the request allowlist")]
    NoDetectorsApplicable,
    #[error("{0}")]
    Evaluation(#[from] EvaluationError),
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::Validation(e) => e.code(),
            GatewayError::NoDetectorsApplicable => "NO_DETECTORS_APPLICABLE",
            GatewayError::Evaluation(EvaluationError::UnknownPolicyId(_)) => "UNKNOWN_POLICY_ID",
            GatewayError::Evaluation(EvaluationError::JurisdictionMismatch { .. }) => {
                "JURISDICTION_MISMATCH"
            }
        }
    }
}

/// Per-request bookkeeping kept alongside the verdict.
#[derive(Debug, Clone)]
pub struct OrchestrationContext {
    pub request: ShieldRequest,
    /// One entry per dispatched detector.
    pub results: BTreeMap<String, DetectorResult>,
    pub started_at: SystemTime,
    pub finished_at: SystemTime,
    pub degraded: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSizes {
    /// Concurrent shield calls admitted at once.
    pub orchestrator: usize,
    /// Detector bodies running at once, across all requests.
    pub detector: usize,
}

impl Default for PoolSizes {
    fn default() -> Self {
        PoolSizes {
            orchestrator: DEFAULT_ORCHESTRATOR_WORKERS,
            detector: DEFAULT_DETECTOR_WORKERS,
        }
    }
}

pub struct Gateway {
    registry: RwLock<Arc<Registry>>,
    policies: RwLock<Arc<PolicySet>>,
    policy_writer: Mutex<()>,
    /// Detectors whose fail mode was set explicitly; the rest are resolved
    /// against the request's policies.
    explicit_fail_mode: HashSet<String>,
    direction_defaults: HashMap<Direction, Vec<String>>,
    requests: Arc<Semaphore>,
    detectors: Arc<Semaphore>,
    runtime: OnceLock<tokio::runtime::Runtime>,
}

impl Gateway {
    pub fn new(policies: PolicySet) -> Self {
        Self::with_pools(policies, PoolSizes::default())
    }

    pub fn with_pools(policies: PolicySet, pools: PoolSizes) -> Self {
        Gateway {
            registry: RwLock::new(Arc::new(Registry::new())),
            policies: RwLock::new(Arc::new(policies)),
            policy_writer: Mutex::new(()),
            explicit_fail_mode: HashSet::new(),
            direction_defaults: HashMap::new(),
            requests: Arc::new(Semaphore::new(pools.orchestrator.max(1))),
            detectors: Arc::new(Semaphore::new(pools.detector.max(1))),
            runtime: OnceLock::new(),
        }
    }

    /// Registers a detector whose fail mode is derived from the policies:
    /// FAIL_CLOSED when a rule of the request's templates blocks on one of
    /// its categories, FAIL_OPEN otherwise.
    pub fn register(
        &mut self,
        descriptor: DetectorDescriptor,
        detector: Arc<dyn detector::Detector>,
    ) -> Result<(), RegistryError> {
        let mut registry = (**self.registry.get_mut().expect("registry lock")).clone();
        registry.register(descriptor, detector)?;
        *self.registry.get_mut().expect("registry lock") = Arc::new(registry);
        Ok(())
    }

    /// Registers a detector with a fixed fail mode.
    pub fn register_with_fail_mode(
        &mut self,
        descriptor: DetectorDescriptor,
        detector: Arc<dyn detector::Detector>,
    ) -> Result<(), RegistryError> {
        let id = descriptor.detector_id.clone();
        self.register(descriptor, detector)?;
        self.explicit_fail_mode.insert(id);
        Ok(())
    }

    /// Detectors run for a direction when the request has no allowlist.
    pub fn set_direction_defaults(&mut self, direction: Direction, ids: Vec<String>) {
        self.direction_defaults.insert(direction, ids);
    }

    pub fn registry(&self) -> Arc<Registry> {
        self.registry.read().expect("registry lock").clone()
    }

    pub fn policies(&self) -> Arc<PolicySet> {
        self.policies.read().expect("policy lock").clone()
    }

    /// Swaps in a whole new policy set; in-flight requests keep the old one.
    pub fn replace_policies(&self, set: PolicySet) {
        let _w = self.policy_writer.lock().expect("policy writer");
        *self.policies.write().expect("policy lock") = Arc::new(set);
    }

    /// Copy-modify-swap of the policy set. Concurrent updates are serialized.
    pub fn update_policies<T, E>(
        &self,
        f: impl FnOnce(&mut PolicySet) -> Result<T, E>,
    ) -> Result<T, E> {
        let _w = self.policy_writer.lock().expect("policy writer");
        let mut next = (*self.policies()).clone();
        let out = f(&mut next)?;
        *self.policies.write().expect("policy lock") = Arc::new(next);
        Ok(out)
    }

    fn fail_mode(
        &self,
        descriptor: &DetectorDescriptor,
        policies: &PolicySet,
        policy_ids: &[String],
    ) -> FailMode {
        if self.explicit_fail_mode.contains(&descriptor.detector_id) {
            return descriptor.fail_mode;
        }
        if policies.blocks_any(policy_ids, &descriptor.categories) {
            FailMode::FailClosed
        } else {
            descriptor.fail_mode
        }
    }

    pub async fn shield(&self, req: ShieldRequest) -> Result<Verdict, GatewayError> {
        self.shield_with_context(req).await.map(|(v, _)| v)
    }

    pub async fn shield_with_context(
        &self,
        req: ShieldRequest,
    ) -> Result<(Verdict, OrchestrationContext), GatewayError> {
        let policies = self.policies();
        let registry = self.registry();
        req.validate(|id| policies.contains(id))?;

        let selected: Option<&Vec<String>> = req
            .detector_allowlist
            .as_ref()
            .or_else(|| self.direction_defaults.get(&req.direction));
        let applicable: Vec<_> = registry
            .iter()
            .filter(|e| selected.is_none_or(|ids| ids.contains(&e.descriptor.detector_id)))
            .collect();
        if applicable.is_empty() {
            return Err(GatewayError::NoDetectorsApplicable);
        }

        let _admitted = self
            .requests
            .clone()
            .acquire_owned()
            .await
            .expect("request pool never closes");
        let started_at = SystemTime::now();
        let started = Instant::now();
        let text: Arc<str> = Arc::from(req.text.as_str());
        let request_id: Arc<str> = Arc::from(req.request_id.as_str());
        let calls = applicable.iter().map(|e| {
            detector::detect(
                &e.descriptor,
                e.detector.clone(),
                text.clone(),
                request_id.clone(),
                Some(self.detectors.clone()),
            )
        });
        let results = futures::future::join_all(calls).await;
        tracing::debug!(
            request_id = %req.request_id,
            elapsed_ms = started.elapsed().as_secs_f64() * 1000.0,
            "detectors resolved"
        );

        let mut findings = Vec::new();
        let mut timings = BTreeMap::new();
        let mut degraded = Vec::new();
        let mut fail_closed = Vec::new();
        for (entry, result) in applicable.iter().zip(&results) {
            timings.insert(result.detector_id.clone(), result.elapsed_ms);
            if result.is_ok() {
                findings.extend(result.findings.iter().cloned());
            } else {
                tracing::warn!(
                    detector = %result.detector_id,
                    status = ?result.status,
                    error = result.error.as_deref().unwrap_or(""),
                    "detector degraded"
                );
                degraded.push(result.detector_id.clone());
                if self.fail_mode(&entry.descriptor, &policies, &req.policy_ids)
                    == FailMode::FailClosed
                {
                    fail_closed.push(result.detector_id.clone());
                }
            }
        }

        let verdict = policies.evaluate(EvaluationInput {
            text: &req.text,
            direction: req.direction,
            jurisdiction: &req.jurisdiction,
            policy_ids: &req.policy_ids,
            findings,
            timings,
            degraded: degraded.clone(),
            fail_closed,
        })?;
        let context = OrchestrationContext {
            results: results
                .into_iter()
                .map(|r| (r.detector_id.clone(), r))
                .collect(),
            request: req,
            started_at,
            finished_at: SystemTime::now(),
            degraded,
        };
        Ok((verdict, context))
    }

    /// [`Gateway::shield`] for callers outside an async runtime. Must not be
    /// called from within a tokio runtime.
    pub fn shield_blocking(&self, req: ShieldRequest) -> Result<Verdict, GatewayError> {
        let rt = self.runtime.get_or_init(|| {
            tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .thread_name("shieldgate-blocking")
                .enable_time()
                .build()
                .expect("tokio runtime")
        });
        rt.block_on(self.shield(req))
    }

    pub fn detector_categories(&self) -> BTreeSet<String> {
        self.registry()
            .descriptors()
            .flat_map(|d| d.categories.iter().cloned())
            .collect()
    }
}
