//! Service configuration file.
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! policy_dir = "policies"          # optional, relative to this file
//! jurisdiction_dir = "tables"      # optional
//!
//! [workers]
//! orchestrator = 40
//! detector = 100
//!
//! [directions]                     # optional per-direction detector sets
//! response = ["pii", "hap", "attribution"]
//!
//! [[detectors]]
//! id = "pii"
//! type = "pii"                     # pii | hap | keyword | attribution | remote
//! rulepack = "rules.toml"          # optional, built-in pack otherwise
//! timeout_ms = 2000
//! fail_mode = "FAIL_CLOSED"        # optional, derived from policies otherwise
//! ```
//!
//! `SHIELDGATE_CONFIG` names the file when no path is given and
//! `SHIELDGATE_LISTEN` overrides `listen`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{
    index_corpus, load_corpus, AttributionConfig, AttributionDetector, CorpusIndex,
    DEFAULT_SHINGLE_WIDTH,
};
use crate::detector::{Detector, DetectorDescriptor, DetectorKind, FailMode, RemoteDetector};
use crate::gateway::{Gateway, PoolSizes, DEFAULT_DETECTOR_WORKERS, DEFAULT_ORCHESTRATOR_WORKERS};
use crate::keywords::{CategoryLexicon, KeywordDetector, SentenceDetector};
use crate::model::Direction;
use crate::pii::{PiiDetector, PiiExtractor};
use crate::policy::{CategoryCatalog, CategoryKind, OverrideTable, PolicyError, PolicySet};

pub const ENV_CONFIG: &str = "SHIELDGATE_CONFIG";
pub const ENV_LISTEN: &str = "SHIELDGATE_LISTEN";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("CONFIG_INVALID: {}: {message}", .path.display())]
    Parse { path: PathBuf, message: String },
    #[error("CONFIG_INVALID: `{field}` refers to missing path {}", .path.display())]
    MissingPath { field: String, path: PathBuf },
    #[error("CONFIG_INVALID: {0}")]
    Invalid(String),
    #[error("CONFIG_INVALID: {0}")]
    Policy(#[from] PolicyError),
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        "CONFIG_INVALID"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorType {
    Pii,
    Hap,
    Keyword,
    Attribution,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub id: String,
    #[serde(rename = "type")]
    pub detector_type: DetectorType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_mode: Option<FailMode>,
    /// PII rule pack.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rulepack: Option<PathBuf>,
    /// Keyword or HAP lexicon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    /// Corpus directory or JSONL file, indexed at startup.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    /// Prebuilt index file written by `vet index`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribution: Option<AttributionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<DetectorKind>,
}

impl DetectorConfig {
    pub fn new(id: impl Into<String>, detector_type: DetectorType) -> Self {
        DetectorConfig {
            id: id.into(),
            detector_type,
            timeout_ms: None,
            fail_mode: None,
            rulepack: None,
            lexicon: None,
            corpus: None,
            index: None,
            k: None,
            attribution: None,
            endpoint: None,
            categories: None,
            kind: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkersConfig {
    #[serde(default = "default_orchestrator_workers")]
    pub orchestrator: usize,
    #[serde(default = "default_detector_workers")]
    pub detector: usize,
}

fn default_orchestrator_workers() -> usize {
    DEFAULT_ORCHESTRATOR_WORKERS
}

fn default_detector_workers() -> usize {
    DEFAULT_DETECTOR_WORKERS
}

impl Default for WorkersConfig {
    fn default() -> Self {
        WorkersConfig {
            orchestrator: DEFAULT_ORCHESTRATOR_WORKERS,
            detector: DEFAULT_DETECTOR_WORKERS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionDefaults {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<Vec<String>>,
}

fn default_listen() -> String {
    DEFAULT_LISTEN.to_string()
}

fn default_detectors() -> Vec<DetectorConfig> {
    vec![
        DetectorConfig::new("pii", DetectorType::Pii),
        DetectorConfig::new("hap", DetectorType::Hap),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default)]
    pub workers: WorkersConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jurisdiction_dir: Option<PathBuf>,
    #[serde(default)]
    pub directions: DirectionDefaults,
    #[serde(default = "default_detectors")]
    pub detectors: Vec<DetectorConfig>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            listen: default_listen(),
            workers: WorkersConfig::default(),
            policy_dir: None,
            jurisdiction_dir: None,
            directions: DirectionDefaults::default(),
            detectors: default_detectors(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl Config {
    pub fn from_toml(raw: &str, base_dir: impl Into<PathBuf>) -> Result<Self, ConfigError> {
        let mut cfg: Config = toml::from_str(raw).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<config>"),
            message: e.to_string(),
        })?;
        cfg.base_dir = base_dir.into();
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        Self::from_toml(&raw, base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    /// The file named by `path`, else by `SHIELDGATE_CONFIG`; `None` when
    /// neither is set. `SHIELDGATE_LISTEN` is applied on top.
    pub fn resolve(path: Option<&Path>) -> Result<Option<Self>, ConfigError> {
        let from_env = std::env::var_os(ENV_CONFIG).map(PathBuf::from);
        let Some(path) = path.map(Path::to_path_buf).or(from_env) else {
            return Ok(None);
        };
        let mut cfg = Self::load(&path)?;
        cfg.apply_env();
        Ok(Some(cfg))
    }

    pub fn apply_env(&mut self) {
        if let Ok(listen) = std::env::var(ENV_LISTEN) {
            if !listen.trim().is_empty() {
                self.listen = listen;
            }
        }
    }

    fn check(&self) -> Result<(), ConfigError> {
        if self.workers.orchestrator == 0 || self.workers.detector == 0 {
            return Err(ConfigError::Invalid("worker counts must be positive".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for d in &self.detectors {
            if !seen.insert(d.id.as_str()) {
                return Err(ConfigError::Invalid(format!("detector id `{}` is used twice", d.id)));
            }
            if d.timeout_ms == Some(0) {
                return Err(ConfigError::Invalid(format!("detector `{}` has a zero timeout", d.id)));
            }
            let need = |field: &str, ok: bool| {
                if ok {
                    Ok(())
                } else {
                    Err(ConfigError::Invalid(format!(
                        "detector `{}` of type {:?} needs `{field}`",
                        d.id, d.detector_type
                    )))
                }
            };
            match d.detector_type {
                DetectorType::Keyword => need("lexicon", d.lexicon.is_some())?,
                DetectorType::Attribution => {
                    need("corpus` or `index", d.corpus.is_some() || d.index.is_some())?
                }
                DetectorType::Remote => {
                    need("endpoint", d.endpoint.is_some())?;
                    need("categories", d.categories.as_ref().is_some_and(|c| !c.is_empty()))?;
                }
                DetectorType::Pii | DetectorType::Hap => {}
            }
        }
        for (dir, ids) in [("prompt", &self.directions.prompt), ("response", &self.directions.response)] {
            for id in ids.iter().flatten() {
                if !seen.contains(id.as_str()) {
                    return Err(ConfigError::Invalid(format!(
                        "directions.{dir} names unknown detector `{id}`"
                    )));
                }
            }
        }
        Ok(())
    }

    fn path(&self, field: &str, p: &Path) -> Result<PathBuf, ConfigError> {
        let full = if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        };
        if full.exists() {
            Ok(full)
        } else {
            Err(ConfigError::MissingPath {
                field: field.to_string(),
                path: full,
            })
        }
    }

    /// Builds the detector, its descriptor and the category kinds it emits.
    fn build_detector(
        &self,
        d: &DetectorConfig,
    ) -> Result<(DetectorDescriptor, Arc<dyn Detector>, Vec<(String, CategoryKind)>), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(format!("detector `{}`: {e}", d.id));
        let (descriptor, detector, kinds): (_, Arc<dyn Detector>, Vec<_>) = match d.detector_type {
            DetectorType::Pii => {
                let extractor = match &d.rulepack {
                    Some(p) => PiiExtractor::from_path(&self.path("rulepack", p)?)
                        .map_err(|e| invalid(&e))?,
                    None => PiiExtractor::builtin(),
                };
                let categories = PiiDetector::categories();
                (
                    DetectorDescriptor::new(&d.id, DetectorKind::Extraction, categories.clone()),
                    Arc::new(PiiDetector::new(&d.id, extractor)),
                    categories
                        .into_iter()
                        .map(|c| (c, CategoryKind::Extraction))
                        .collect(),
                )
            }
            DetectorType::Hap | DetectorType::Keyword => {
                let lexicon = match &d.lexicon {
                    Some(p) => CategoryLexicon::from_path(&self.path("lexicon", p)?)
                        .map_err(|e| invalid(&e))?,
                    None => CategoryLexicon::builtin_hap(),
                };
                let category = lexicon.category.clone();
                let detector: Arc<dyn Detector> = if d.detector_type == DetectorType::Hap {
                    Arc::new(SentenceDetector::new(&d.id, lexicon))
                } else {
                    Arc::new(KeywordDetector::new(&d.id, lexicon))
                };
                (
                    DetectorDescriptor::new(&d.id, DetectorKind::Classification, [category.clone()]),
                    detector,
                    vec![(category, CategoryKind::Classification)],
                )
            }
            DetectorType::Attribution => {
                let index = match (&d.index, &d.corpus) {
                    (Some(p), _) => {
                        let bytes = std::fs::read(self.path("index", p)?).map_err(|e| invalid(&e))?;
                        CorpusIndex::from_bytes(&bytes).map_err(|e| invalid(&e))?
                    }
                    (None, Some(p)) => {
                        let docs = load_corpus(&self.path("corpus", p)?).map_err(|e| invalid(&e))?;
                        index_corpus(docs, d.k.unwrap_or(DEFAULT_SHINGLE_WIDTH))
                            .map_err(|e| invalid(&e))?
                    }
                    (None, None) => unreachable!("checked at load"),
                };
                (
                    DetectorDescriptor::new(&d.id, DetectorKind::Comparison, ["attribution"]),
                    Arc::new(AttributionDetector::new(
                        &d.id,
                        Arc::new(index),
                        d.attribution.unwrap_or_default(),
                    )),
                    vec![("attribution".to_string(), CategoryKind::Comparison)],
                )
            }
            DetectorType::Remote => {
                let kind = d.kind.unwrap_or(DetectorKind::Classification);
                let categories = d.categories.clone().unwrap_or_default();
                let descriptor = DetectorDescriptor::new(&d.id, kind, categories.clone());
                let endpoint = d.endpoint.as_deref().unwrap_or_default();
                let category_kind = match kind {
                    DetectorKind::Classification => CategoryKind::Classification,
                    DetectorKind::Extraction => CategoryKind::Extraction,
                    DetectorKind::Comparison => CategoryKind::Comparison,
                };
                (
                    descriptor.clone(),
                    Arc::new(RemoteDetector::new(&d.id, endpoint, descriptor_timeout(d))),
                    categories.into_iter().map(|c| (c, category_kind)).collect(),
                )
            }
        };
        let mut descriptor = descriptor;
        if let Some(t) = d.timeout_ms {
            descriptor = descriptor.with_timeout_ms(t);
        }
        if let Some(m) = d.fail_mode {
            descriptor = descriptor.with_fail_mode(m);
        }
        Ok((descriptor, detector, kinds))
    }

    /// Loads every referenced artifact and assembles a ready gateway.
    pub fn build_gateway(&self) -> Result<Gateway, ConfigError> {
        let mut catalog = CategoryCatalog::builtin();
        let mut built = Vec::with_capacity(self.detectors.len());
        for d in &self.detectors {
            let (descriptor, detector, kinds) = self.build_detector(d)?;
            for (category, kind) in kinds {
                catalog.insert(category, kind);
            }
            built.push((descriptor, detector, d.fail_mode.is_some()));
        }

        let mut policies = PolicySet::builtin_with(catalog);
        if let Some(dir) = &self.jurisdiction_dir {
            let dir = self.path("jurisdiction_dir", dir)?;
            let mut files: Vec<_> = std::fs::read_dir(&dir)
                .map_err(|e| ConfigError::Invalid(format!("{}: {e}", dir.display())))?
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|e| e == "toml"))
                .collect();
            files.sort();
            for f in files {
                let raw = std::fs::read_to_string(&f)
                    .map_err(|e| ConfigError::Invalid(format!("{}: {e}", f.display())))?;
                policies.insert_override(OverrideTable::from_toml(&raw)?);
            }
        }
        if let Some(dir) = &self.policy_dir {
            policies.load_dir(&self.path("policy_dir", dir)?)?;
        }

        let mut gateway = Gateway::with_pools(
            policies,
            PoolSizes {
                orchestrator: self.workers.orchestrator,
                detector: self.workers.detector,
            },
        );
        for (descriptor, detector, explicit) in built {
            let result = if explicit {
                gateway.register_with_fail_mode(descriptor, detector)
            } else {
                gateway.register(descriptor, detector)
            };
            result.map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if let Some(ids) = &self.directions.prompt {
            gateway.set_direction_defaults(Direction::Prompt, ids.clone());
        }
        if let Some(ids) = &self.directions.response {
            gateway.set_direction_defaults(Direction::Response, ids.clone());
        }
        Ok(gateway)
    }
}

fn descriptor_timeout(d: &DetectorConfig) -> std::time::Duration {
    std::time::Duration::from_millis(d.timeout_ms.unwrap_or(crate::detector::DEFAULT_TIMEOUT_MS))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = Config::from_toml("", ".").unwrap();
        assert_eq!(cfg.listen, DEFAULT_LISTEN);
        assert_eq!(cfg.workers.orchestrator, 40);
        assert_eq!(cfg.workers.detector, 100);
        let g = cfg.build_gateway().unwrap();
        assert_eq!(g.registry().ids(), vec!["pii", "hap"]);
    }

    #[test]
    fn missing_rulepack_names_the_path() {
        let raw = "[[detectors]]\nid = \"pii\"\ntype = \"pii\"\nrulepack = \"nope/rules.toml\"\n";
        let cfg = Config::from_toml(raw, "/tmp/base").unwrap();
        let err = cfg.build_gateway().err().unwrap();
        assert_eq!(err.code(), "CONFIG_INVALID");
        assert!(err.to_string().contains("/tmp/base/nope/rules.toml"), "{err}");
    }

    #[test]
    fn rejects_bad_shapes() {
        for raw in [
            "listen = 5",
            "unknown = true",
            "[[detectors]]\nid = \"k\"\ntype = \"keyword\"\n",
            "[[detectors]]\nid = \"r\"\ntype = \"remote\"\nendpoint = \"http://x\"\n",
            "[[detectors]]\nid = \"a\"\ntype = \"pii\"\n[[detectors]]\nid = \"a\"\ntype = \"hap\"\n",
            "[directions]\nprompt = [\"ghost\"]\n",
            "[workers]\norchestrator = 0\n",
        ] {
            assert!(Config::from_toml(raw, ".").is_err(), "{raw:?}");
        }
    }

    #[test]
    fn full_config_builds() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("corpus")).unwrap();
        std::fs::write(
            dir.path().join("corpus/a.txt"),
            "the quick brown fox jumps over the lazy dog near the river bank",
        )
        .unwrap();
        std::fs::create_dir(dir.path().join("policies")).unwrap();
        std::fs::write(
            dir.path().join("policies/extra.toml"),
            "policy_id = \"extra\"\ndefault_action = \"PASS\"\n[[rules]]\nid = \"r\"\nwhen = 'category == \"ext.*\"'\naction = \"MASK\"\n",
        )
        .unwrap();
        let raw = r#"
listen = "127.0.0.1:0"
policy_dir = "policies"

[workers]
orchestrator = 8
detector = 16

[directions]
response = ["pii", "attr"]

[[detectors]]
id = "pii"
type = "pii"

[[detectors]]
id = "attr"
type = "attribution"
corpus = "corpus"
k = 3

[[detectors]]
id = "ext"
type = "remote"
endpoint = "http://127.0.0.1:9"
categories = ["ext.account"]
kind = "EXTRACTION"
timeout_ms = 100
fail_mode = "FAIL_OPEN"
"#;
        std::fs::write(dir.path().join("gw.toml"), raw).unwrap();
        let cfg = Config::load(&dir.path().join("gw.toml")).unwrap();
        let g = cfg.build_gateway().unwrap();
        assert_eq!(g.registry().ids(), vec!["pii", "attr", "ext"]);
        assert!(g.policies().contains("extra"));
    }
}
