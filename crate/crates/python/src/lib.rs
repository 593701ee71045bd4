//! Python bindings: `import pyshieldgate`.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pythonize::pythonize;
use shieldgate::attribution::{self, AttributionConfig};
use shieldgate::config::Config;
use shieldgate::keywords::{self, CategoryLexicon, DocLabel};
use shieldgate::model::{Direction, ShieldRequest};
use shieldgate::pii::{self, MaskStyle};
use shieldgate::policy::{CategoryCatalog, PolicyTemplate};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    Ok(pythonize(py, value).map_err(value_error)?.unbind())
}

/// The detector registry plus policy set behind the HTTP API.
#[pyclass(name = "Gateway", module = "pyshieldgate")]
struct PyGateway {
    inner: Arc<shieldgate::gateway::Gateway>,
}

#[pymethods]
impl PyGateway {
    /// Builds from a TOML config file, or the built-in PII and HAP detectors when `config` is None.
    #[new]
    #[pyo3(signature = (config=None))]
    fn new(config: Option<PathBuf>) -> PyResult<Self> {
        let cfg = match config {
            Some(path) => Config::load(&path).map_err(value_error)?,
            None => Config::default(),
        };
        Ok(PyGateway {
            inner: Arc::new(cfg.build_gateway().map_err(value_error)?),
        })
    }

    fn detectors(&self) -> Vec<String> {
        self.inner.registry().ids()
    }

    fn policies(&self) -> Vec<String> {
        self.inner.policies().ids()
    }

    /// Returns the verdict as a dict.
    #[pyo3(signature = (text, direction="prompt", policy_ids=None, jurisdiction=None, detectors=None))]
    fn shield(
        &self,
        py: Python<'_>,
        text: String,
        direction: &str,
        policy_ids: Option<Vec<String>>,
        jurisdiction: Option<String>,
        detectors: Option<Vec<String>>,
    ) -> PyResult<Py<PyAny>> {
        let direction: Direction = direction.parse().map_err(value_error)?;
        let mut req = ShieldRequest::new(text, direction);
        if let Some(ids) = policy_ids {
            req.policy_ids = ids;
        }
        if let Some(j) = jurisdiction {
            req.jurisdiction = j;
        }
        req.detector_allowlist = detectors;
        let gateway = self.inner.clone();
        let verdict = py
            .detach(move || gateway.shield_blocking(req))
            .map_err(value_error)?;
        to_py(py, &verdict)
    }

    /// Adds or replaces a policy from TOML source; returns its summary.
    fn put_policy(&self, py: Python<'_>, source: &str) -> PyResult<Py<PyAny>> {
        let summary = self
            .inner
            .update_policies(|set| set.insert_toml(source).map(|t| t.summary()))
            .map_err(value_error)?;
        to_py(py, &summary)
    }
}

/// Regex + validator PII extraction with the built-in rule pack.
#[pyclass(name = "PiiExtractor", module = "pyshieldgate")]
struct PyPiiExtractor {
    inner: pii::PiiExtractor,
}

#[pymethods]
impl PyPiiExtractor {
    #[new]
    #[pyo3(signature = (rulepack=None))]
    fn new(rulepack: Option<PathBuf>) -> PyResult<Self> {
        let inner = match rulepack {
            Some(path) => pii::PiiExtractor::from_path(&path).map_err(value_error)?,
            None => pii::PiiExtractor::builtin(),
        };
        Ok(PyPiiExtractor { inner })
    }

    /// List of `{surface, pii_type, span: {start, end}, sensitivity}` dicts.
    fn extract(&self, py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.extract(text))
    }

    #[pyo3(signature = (text, style="MASK_TYPE"))]
    fn redact(&self, text: &str, style: &str) -> PyResult<String> {
        let style: MaskStyle = style.parse().map_err(value_error)?;
        let pairs = pii::merge_overlapping(&self.inner.extract(text));
        pii::redact(text, &pairs, style).map_err(value_error)
    }
}

/// Shingle index over a document corpus.
#[pyclass(name = "CorpusIndex", module = "pyshieldgate")]
struct PyCorpusIndex {
    inner: attribution::CorpusIndex,
}

#[pymethods]
impl PyCorpusIndex {
    #[new]
    #[pyo3(signature = (docs, k=attribution::DEFAULT_SHINGLE_WIDTH))]
    fn new(docs: Vec<(String, String)>, k: usize) -> PyResult<Self> {
        Ok(PyCorpusIndex {
            inner: attribution::index_corpus(docs, k).map_err(value_error)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.doc_count()
    }

    #[pyo3(signature = (query, min_similarity=None))]
    fn attribute(&self, py: Python<'_>, query: &str, min_similarity: Option<f64>) -> PyResult<Py<PyAny>> {
        let mut cfg = AttributionConfig::default();
        if let Some(m) = min_similarity {
            cfg.min_similarity = m;
        }
        to_py(py, &self.inner.attribute(query, &cfg).map_err(value_error)?)
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.inner.to_bytes()
    }

    #[staticmethod]
    fn from_bytes(bytes: Vec<u8>) -> PyResult<Self> {
        Ok(PyCorpusIndex {
            inner: attribution::CorpusIndex::from_bytes(&bytes).map_err(value_error)?,
        })
    }
}

/// Ranks terms of `(text, is_positive)` documents by TF-IDF salience margin.
#[pyfunction]
fn rank_terms(docs: Vec<(String, bool)>) -> PyResult<Vec<(String, f64)>> {
    let labelled: Vec<(String, DocLabel)> = docs
        .into_iter()
        .map(|(t, pos)| (t, if pos { DocLabel::Positive } else { DocLabel::Negative }))
        .collect();
    Ok(keywords::rank_terms(&labelled)
        .map_err(value_error)?
        .into_iter()
        .map(|t| (t.term, t.margin))
        .collect())
}

/// Squashed keyword score of `text` under a lexicon given as TOML source.
#[pyfunction]
fn lexicon_score(lexicon: &str, text: &str) -> PyResult<f64> {
    Ok(CategoryLexicon::from_toml(lexicon).map_err(value_error)?.score(text))
}

/// Parses and checks a policy document; returns its summary or raises ValueError.
#[pyfunction]
fn validate_policy(py: Python<'_>, source: &str) -> PyResult<Py<PyAny>> {
    let template = PolicyTemplate::from_toml(source, &CategoryCatalog::builtin()).map_err(value_error)?;
    to_py(py, &template.summary())
}

#[pymodule]
fn pyshieldgate(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGateway>()?;
    m.add_class::<PyPiiExtractor>()?;
    m.add_class::<PyCorpusIndex>()?;
    m.add_function(wrap_pyfunction!(rank_terms, m)?)?;
    m.add_function(wrap_pyfunction!(lexicon_score, m)?)?;
    m.add_function(wrap_pyfunction!(validate_policy, m)?)?;
    Ok(())
}
