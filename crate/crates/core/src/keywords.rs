//! Keyword-lexicon classification detectors.
//!
//! A [`CategoryLexicon`] is either trained from a labeled corpus with
//! TF-IDF salience ([`build_lexicon`]) or loaded from a lexicon file. It
//! scores whole texts ([`CategoryLexicon::classify`]) or individual
//! sentences ([`CategoryLexicon::score_sentences`]).
//!
//! TF-IDF conventions used throughout:
//!
//! * `tf(t, d) = count(t, d) / |d|` over lowercased word tokens,
//! * `idf(t) = ln((1 + N) / (1 + df(t))) + 1`,
//! * salience margin = mean `tf·idf` over positive documents minus the mean
//!   over negative documents.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{Detector, DetectorError};
use crate::model::{Finding, Span};
use crate::text::{word_tokens, SentenceSplitter};

pub const DEFAULT_THRESHOLD: f64 = 0.3;

const BUILTIN_HAP: &str = include_str!("../data/lexicons/hap.toml");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("DEGENERATE_CORPUS: training data needs both positive and negative documents")]
    DegenerateCorpus,
    #[error("lexicon parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("lexicon serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("threshold {0} must lie in (0, 1)")]
    BadThreshold(f64),
    #[error("keyword `{0}` has a non-positive or non-finite weight")]
    BadWeight(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocLabel {
    Positive,
    Negative,
}

/// Term weights for one risk category plus its decision threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryLexicon {
    pub category: String,
    pub threshold: f64,
    pub keywords: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub span: Span,
    pub score: f64,
}

/// Per-term salience as computed by [`build_lexicon`], exposed for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct TermSalience {
    pub term: String,
    pub margin: f64,
}

/// Ranks every term of the corpus by salience margin, highest first; ties
/// break lexicographically.
pub fn rank_terms(docs: &[(String, DocLabel)]) -> Result<Vec<TermSalience>, LexiconError> {
    let n_pos = docs.iter().filter(|(_, l)| *l == DocLabel::Positive).count();
    let n_neg = docs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(LexiconError::DegenerateCorpus);
    }
    let tokenized: Vec<(Vec<String>, DocLabel)> =
        docs.iter().map(|(t, l)| (word_tokens(t), *l)).collect();

    let mut df: HashMap<&str, usize> = HashMap::new();
    for (toks, _) in &tokenized {
        let mut seen: Vec<&str> = toks.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_default() += 1;
        }
    }
    let n = docs.len() as f64;
    let idf = |t: &str| ((1.0 + n) / (1.0 + df[t] as f64)).ln() + 1.0;

    let mut pos_sum: HashMap<&str, f64> = HashMap::new();
    let mut neg_sum: HashMap<&str, f64> = HashMap::new();
    for (toks, label) in &tokenized {
        if toks.is_empty() {
            continue;
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in toks {
            *counts.entry(t.as_str()).or_default() += 1;
        }
        let len = toks.len() as f64;
        let sums = match label {
            DocLabel::Positive => &mut pos_sum,
            DocLabel::Negative => &mut neg_sum,
        };
        for (t, c) in counts {
            *sums.entry(t).or_default() += c as f64 / len * idf(t);
        }
    }
    let mut ranked: Vec<TermSalience> = df
        .keys()
        .map(|t| TermSalience {
            term: t.to_string(),
            margin: pos_sum.get(t).copied().unwrap_or(0.0) / n_pos as f64
                - neg_sum.get(t).copied().unwrap_or(0.0) / n_neg as f64,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.margin
            .partial_cmp(&a.margin)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.term.cmp(&b.term))
    });
    Ok(ranked)
}

/// Keeps the `top_n` terms with a positive salience margin; each keyword's
/// weight is its margin.
pub fn build_lexicon(
    docs: &[(String, DocLabel)],
    category: &str,
    top_n: usize,
) -> Result<CategoryLexicon, LexiconError> {
    let keywords = rank_terms(docs)?
        .into_iter()
        .filter(|t| t.margin > 0.0)
        .take(top_n)
        .map(|t| (t.term, t.margin))
        .collect();
    Ok(CategoryLexicon {
        category: category.to_string(),
        threshold: DEFAULT_THRESHOLD,
        keywords,
    })
}

impl CategoryLexicon {
    pub fn new(category: impl Into<String>, threshold: f64) -> Result<Self, LexiconError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(LexiconError::BadThreshold(threshold));
        }
        Ok(CategoryLexicon {
            category: category.into(),
            threshold,
            keywords: BTreeMap::new(),
        })
    }

    pub fn with_keyword(mut self, term: &str, weight: f64) -> Self {
        self.keywords.insert(term.to_lowercase(), weight);
        self
    }

    pub fn builtin_hap() -> Self {
        Self::from_toml(BUILTIN_HAP).expect("built-in HAP lexicon is valid")
    }

    pub fn from_toml(raw: &str) -> Result<Self, LexiconError> {
        let lex: CategoryLexicon = toml::from_str(raw)?;
        lex.validate()?;
        Ok(lex)
    }

    pub fn from_path(path: &Path) -> Result<Self, LexiconError> {
        let raw = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&raw)
    }

    pub fn to_toml(&self) -> Result<String, LexiconError> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<(), LexiconError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(LexiconError::BadThreshold(self.threshold));
        }
        if let Some((term, _)) = self
            .keywords
            .iter()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(LexiconError::BadWeight(term.clone()));
        }
        Ok(())
    }

    /// `s = Σ count·weight / token_count`, squashed as `s / (s + 1)`.
    pub fn score(&self, text: &str) -> f64 {
        let toks = word_tokens(text);
        if toks.is_empty() {
            return 0.0;
        }
        let mass: f64 = toks
            .iter()
            .filter_map(|t| self.keywords.get(t))
            .sum();
        let s = mass / toks.len() as f64;
        s / (s + 1.0)
    }

    /// Whole-text classification. The finding's label is `positive` iff the
    /// score reaches the threshold.
    pub fn classify(&self, text: &str) -> Finding {
        let score = self.score(text);
        let label = if score >= self.threshold {
            "positive"
        } else {
            "negative"
        };
        Finding::new(&self.category, &self.category, label, score)
    }

    pub fn score_sentences_with(&self, splitter: &SentenceSplitter, text: &str) -> Vec<SentenceScore> {
        let chars: Vec<char> = text.chars().collect();
        splitter
            .split(text)
            .into_iter()
            .map(|span| {
                let sentence: String = chars[span.start..span.end].iter().collect();
                SentenceScore {
                    span,
                    score: self.score(&sentence),
                }
            })
            .collect()
    }

    pub fn score_sentences(&self, text: &str) -> Vec<SentenceScore> {
        self.score_sentences_with(&SentenceSplitter::default(), text)
    }

    /// One spanned finding per sentence scoring at or above the threshold.
    pub fn sentence_findings(&self, detector_id: &str, text: &str) -> Vec<Finding> {
        self.score_sentences(text)
            .into_iter()
            .filter(|s| s.score >= self.threshold)
            .map(|s| {
                Finding::new(detector_id, &self.category, &self.category, s.score).with_span(s.span)
            })
            .collect()
    }
}

/// Whole-text lexicon classifier; emits a finding only for positive texts.
pub struct KeywordDetector {
    detector_id: String,
    lexicon: CategoryLexicon,
}

impl KeywordDetector {
    pub fn new(detector_id: impl Into<String>, lexicon: CategoryLexicon) -> Self {
        KeywordDetector {
            detector_id: detector_id.into(),
            lexicon,
        }
    }
}

impl Detector for KeywordDetector {
    fn detect(&self, text: &str, _request_id: &str) -> Result<Vec<Finding>, DetectorError> {
        let mut finding = self.lexicon.classify(text);
        if finding.label != "positive" {
            return Ok(Vec::new());
        }
        finding.detector_id = self.detector_id.clone();
        Ok(vec![finding])
    }
}

/// Per-sentence lexicon scorer (hate / abuse / profanity style).
pub struct SentenceDetector {
    detector_id: String,
    lexicon: CategoryLexicon,
}

impl SentenceDetector {
    pub fn new(detector_id: impl Into<String>, lexicon: CategoryLexicon) -> Self {
        SentenceDetector {
            detector_id: detector_id.into(),
            lexicon,
        }
    }
}

impl Detector for SentenceDetector {
    fn detect(&self, text: &str, _request_id: &str) -> Result<Vec<Finding>, DetectorError> {
        Ok(self.lexicon.sentence_findings(&self.detector_id, text))
    }
}
