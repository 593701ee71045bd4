//! Built-in PII extraction detector.
//!
//! Entities are found with per-type regular expressions, filtered by
//! structural / checksum validators, and given a sensitivity level by a
//! windowed weighted-lexicon pass over the words around each match.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use regex::Regex;
use serde::Deserialize;
use thiserror::Error;

use crate::detector::{Detector, DetectorError};
use crate::model::{CharIndex, ExtractionPair, Finding, PiiType, Sensitivity, Span};
use crate::text::{tokens, word_tokens, Token};

pub const DEFAULT_CONTEXT_THRESHOLD: f64 = 1.5;
pub const DEFAULT_CONTEXT_WINDOW: usize = 8;

const BUILTIN_RULE_PACK: &str = include_str!("../data/rulepacks/default.toml");
const BUILTIN_GIVEN_NAMES: &str = include_str!("../data/lexicons/given_names.txt");
const BUILTIN_SURNAMES: &str = include_str!("../data/lexicons/surnames.txt");

#[derive(Debug, Error)]
pub enum RulePackError {
    #[error("rule pack parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown PII type `{0}`")]
    UnknownPiiType(String),
    #[error("PII type `{0}` is defined by more than one rule")]
    DuplicatePiiType(String),
    #[error("unknown validator `{0}`")]
    UnknownValidator(String),
    #[error("bad sensitivity `{0}`")]
    BadSensitivity(String),
    #[error("invalid pattern for {pii_type}: {source}")]
    BadPattern {
        pii_type: String,
        #[source]
        source: regex::Error,
    },
    #[error("context weight for `{term}` in {pii_type} is not finite")]
    NonFiniteWeight { pii_type: String, term: String },
    #[error("unsupported rule pack version {0}")]
    Version(u32),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RedactError {
    #[error("OVERLAPPING_SPANS: {0} overlaps {1}")]
    OverlappingSpans(Span, Span),
    #[error("SPAN_OUT_OF_RANGE: {0}")]
    OutOfRange(Span),
}

/// Checksum / structure predicates applied to regex candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validator {
    Luhn,
    Ssn,
    Iban,
    Date,
    Ein,
    Nanp,
    HasDigit,
}

impl Validator {
    pub fn from_name(name: &str) -> Result<Self, RulePackError> {
        Ok(match name {
            "luhn" => Validator::Luhn,
            "ssn" => Validator::Ssn,
            "iban" => Validator::Iban,
            "date" => Validator::Date,
            "ein" => Validator::Ein,
            "nanp" => Validator::Nanp,
            "has_digit" => Validator::HasDigit,
            other => return Err(RulePackError::UnknownValidator(other.to_string())),
        })
    }

    pub fn check(&self, candidate: &str) -> bool {
        match self {
            Validator::Luhn => luhn_valid(candidate),
            Validator::Ssn => ssn_valid(candidate),
            Validator::Iban => iban_valid(candidate),
            Validator::Date => date_valid(candidate),
            Validator::Ein => ein_valid(candidate),
            Validator::Nanp => nanp_valid(candidate),
            Validator::HasDigit => candidate.chars().any(|c| c.is_ascii_digit()),
        }
    }
}

fn digits(s: &str) -> Vec<u32> {
    s.chars().filter_map(|c| c.to_digit(10)).collect()
}

/// Luhn check digit test over the digits of `s` (separators ignored).
pub fn luhn_valid(s: &str) -> bool {
    let ds = digits(s);
    if !(12..=19).contains(&ds.len()) {
        return false;
    }
    let sum: u32 = ds
        .iter()
        .rev()
        .enumerate()
        .map(|(i, &d)| {
            if i % 2 == 1 {
                let dd = d * 2;
                if dd > 9 {
                    dd - 9
                } else {
                    dd
                }
            } else {
                d
            }
        })
        .sum();
    sum % 10 == 0
}

fn ssn_valid(s: &str) -> bool {
    let ds = digits(s);
    if ds.len() != 9 {
        return false;
    }
    let area = ds[0] * 100 + ds[1] * 10 + ds[2];
    let group = ds[3] * 10 + ds[4];
    let serial = ds[5] * 1000 + ds[6] * 100 + ds[7] * 10 + ds[8];
    area != 0 && area != 666 && area < 900 && group != 0 && serial != 0
}

fn iban_valid(s: &str) -> bool {
    let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if !(15..=34).contains(&compact.len()) || !compact.is_ascii() {
        return false;
    }
    let (head, tail) = compact.split_at(4);
    let mut remainder: u32 = 0;
    for c in tail.chars().chain(head.chars()) {
        let value = match c {
            '0'..='9' => c as u32 - '0' as u32,
            'A'..='Z' => c as u32 - 'A' as u32 + 10,
            _ => return false,
        };
        let width = if value >= 10 { 100 } else { 10 };
        remainder = (remainder * width + value) % 97;
    }
    remainder == 1
}

const MONTHS: [&str; 12] = [
    "january",
    "february",
    "march",
    "april",
    "may",
    "june",
    "july",
    "august",
    "september",
    "october",
    "november",
    "december",
];

fn days_in_month(year: u32, month: u32) -> u32 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 if (year % 4 == 0 && year % 100 != 0) || year % 400 == 0 => 29,
        2 => 28,
        _ => 0,
    }
}

/// Accepts `YYYY-MM-DD`, `MM/DD/YYYY` and `Month D, YYYY` calendar dates.
fn date_valid(s: &str) -> bool {
    let parts: Vec<&str> = s
        .split(|c: char| c == '-' || c == '/' || c == ',' || c.is_whitespace())
        .filter(|p| !p.is_empty())
        .collect();
    if parts.len() != 3 {
        return false;
    }
    let num = |p: &str| p.parse::<u32>().ok();
    let (year, month, day) = if s.contains('-') {
        match (num(parts[0]), num(parts[1]), num(parts[2])) {
            (Some(y), Some(m), Some(d)) => (y, m, d),
            _ => return false,
        }
    } else if s.contains('/') {
        match (num(parts[0]), num(parts[1]), num(parts[2])) {
            (Some(m), Some(d), Some(y)) => (y, m, d),
            _ => return false,
        }
    } else {
        let month = MONTHS
            .iter()
            .position(|m| m.eq_ignore_ascii_case(parts[0]))
            .map(|i| i as u32 + 1);
        match (month, num(parts[1]), num(parts[2])) {
            (Some(m), Some(d), Some(y)) => (y, m, d),
            _ => return false,
        }
    };
    (1900..=2100).contains(&year) && day >= 1 && day <= days_in_month(year, month)
}

fn ein_valid(s: &str) -> bool {
    let ds = digits(s);
    if ds.len() != 9 {
        return false;
    }
    let prefix = ds[0] * 10 + ds[1];
    matches!(prefix, 1..=6 | 10..=16 | 20..=27 | 30..=48 | 50..=68 | 71..=77 | 80..=88 | 90..=95 | 98 | 99)
}

/// North American numbering plan: area code and exchange start with 2-9.
fn nanp_valid(s: &str) -> bool {
    let mut ds = digits(s);
    if ds.len() == 11 && ds[0] == 1 {
        ds.remove(0);
    }
    match ds.len() {
        7 => ds[0] >= 2,
        10 => ds[0] >= 2 && ds[3] >= 2,
        _ => false,
    }
}

#[derive(Debug, Clone)]
struct CompiledPattern {
    regex: Regex,
    validator: Option<Validator>,
    has_pii_group: bool,
}

/// One PII type's matching and scoring configuration.
#[derive(Debug, Clone)]
pub struct PiiRule {
    pub pii_type: PiiType,
    patterns: Vec<CompiledPattern>,
    pub validator: Option<Validator>,
    pub base_sensitivity: Sensitivity,
    /// Each term is stored as its lowercase word sequence.
    pub context_terms: Vec<(Vec<String>, f64)>,
    pub context_window: usize,
    pub context_threshold: f64,
    pub confidence: f64,
}

impl PiiRule {
    /// A rule with no patterns, mainly for scoring fixtures.
    pub fn scoring_only(pii_type: PiiType, base: Sensitivity) -> Self {
        PiiRule {
            pii_type,
            patterns: Vec::new(),
            validator: None,
            base_sensitivity: base,
            context_terms: Vec::new(),
            context_window: DEFAULT_CONTEXT_WINDOW,
            context_threshold: DEFAULT_CONTEXT_THRESHOLD,
            confidence: 1.0,
        }
    }

    pub fn with_context_term(mut self, term: &str, weight: f64) -> Self {
        self.context_terms.push((word_tokens(term), weight));
        self
    }

    pub fn with_context(mut self, window: usize, threshold: f64) -> Self {
        self.context_window = window;
        self.context_threshold = threshold;
        self
    }

    pub fn pattern_count(&self) -> usize {
        self.patterns.len()
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PatternSpec {
    Plain(String),
    WithValidator {
        regex: String,
        validator: Option<String>,
    },
}

#[derive(Debug, Deserialize)]
struct RuleSpec {
    pii_type: String,
    patterns: Vec<PatternSpec>,
    #[serde(default)]
    validator: Option<String>,
    base_sensitivity: String,
    #[serde(default)]
    context_terms: BTreeMap<String, f64>,
    #[serde(default)]
    context_window: Option<usize>,
    #[serde(default)]
    context_threshold: Option<f64>,
    #[serde(default)]
    confidence: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
struct NameLexiconSpec {
    #[serde(default)]
    given_names: Vec<String>,
    #[serde(default)]
    surnames: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct RulePackFile {
    version: u32,
    #[serde(default)]
    context_threshold: Option<f64>,
    #[serde(default)]
    context_window: Option<usize>,
    #[serde(default)]
    name_lexicon: Option<NameLexiconSpec>,
    rules: Vec<RuleSpec>,
}

fn lexicon_lines(raw: &str) -> Vec<String> {
    raw.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

fn alternation(names: &[String]) -> String {
    let mut sorted: Vec<&String> = names.iter().collect();
    // Longest first so the alternation prefers "Johnson" over "John".
    sorted.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    sorted
        .iter()
        .map(|n| regex::escape(n))
        .collect::<Vec<_>>()
        .join("|")
}

/// The loaded rule set: exactly one rule per PII type.
#[derive(Debug, Clone)]
pub struct PiiExtractor {
    rules: Vec<PiiRule>,
}

impl PiiExtractor {
    /// The rule pack and name lexicons shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN_RULE_PACK).expect("built-in rule pack is valid")
    }

    pub fn from_path(path: &Path) -> Result<Self, RulePackError> {
        let raw = std::fs::read_to_string(path).map_err(|source| RulePackError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&raw)
    }

    pub fn from_toml(raw: &str) -> Result<Self, RulePackError> {
        let pack: RulePackFile = toml::from_str(raw)?;
        if pack.version != 1 {
            return Err(RulePackError::Version(pack.version));
        }
        let lex = pack.name_lexicon.unwrap_or_default();
        let given = if lex.given_names.is_empty() {
            lexicon_lines(BUILTIN_GIVEN_NAMES)
        } else {
            lex.given_names
        };
        let surnames = if lex.surnames.is_empty() {
            lexicon_lines(BUILTIN_SURNAMES)
        } else {
            lex.surnames
        };
        let given_alt = alternation(&given);
        let surname_alt = alternation(&surnames);
        let threshold = pack.context_threshold.unwrap_or(DEFAULT_CONTEXT_THRESHOLD);
        let window = pack.context_window.unwrap_or(DEFAULT_CONTEXT_WINDOW);

        let mut seen = BTreeSet::new();
        let mut rules = Vec::with_capacity(pack.rules.len());
        for r in pack.rules {
            let pii_type: PiiType = r
                .pii_type
                .parse()
                .map_err(|_| RulePackError::UnknownPiiType(r.pii_type.clone()))?;
            if !seen.insert(pii_type) {
                return Err(RulePackError::DuplicatePiiType(r.pii_type));
            }
            let validator = r.validator.as_deref().map(Validator::from_name).transpose()?;
            let mut patterns = Vec::with_capacity(r.patterns.len());
            for p in r.patterns {
                let (src, v) = match p {
                    PatternSpec::Plain(s) => (s, validator),
                    PatternSpec::WithValidator { regex, validator: v } => {
                        (regex, v.as_deref().map(Validator::from_name).transpose()?)
                    }
                };
                let expanded = src
                    .replace("{given_names}", &given_alt)
                    .replace("{surnames}", &surname_alt);
                let regex = Regex::new(&expanded).map_err(|source| RulePackError::BadPattern {
                    pii_type: r.pii_type.clone(),
                    source,
                })?;
                let has_pii_group = regex.capture_names().any(|n| n == Some("pii"));
                patterns.push(CompiledPattern {
                    regex,
                    validator: v,
                    has_pii_group,
                });
            }
            let mut context_terms = Vec::with_capacity(r.context_terms.len());
            for (term, weight) in r.context_terms {
                if !weight.is_finite() {
                    return Err(RulePackError::NonFiniteWeight {
                        pii_type: r.pii_type.clone(),
                        term,
                    });
                }
                context_terms.push((word_tokens(&term), weight));
            }
            rules.push(PiiRule {
                pii_type,
                patterns,
                validator,
                base_sensitivity: r
                    .base_sensitivity
                    .parse()
                    .map_err(|_| RulePackError::BadSensitivity(r.base_sensitivity.clone()))?,
                context_terms,
                context_window: r.context_window.unwrap_or(window),
                context_threshold: r.context_threshold.unwrap_or(threshold),
                confidence: r.confidence.unwrap_or(1.0).clamp(0.0, 1.0),
            });
        }
        Ok(PiiExtractor { rules })
    }

    pub fn rules(&self) -> &[PiiRule] {
        &self.rules
    }

    pub fn rule(&self, pii_type: PiiType) -> Option<&PiiRule> {
        self.rules.iter().find(|r| r.pii_type == pii_type)
    }

    /// Finds PII entities, sorted by span start. Overlapping matches of the
    /// same type collapse to the longest one; validator failures are dropped.
    pub fn extract(&self, text: &str) -> Vec<ExtractionPair> {
        let index = CharIndex::new(text);
        let words = tokens(text);
        let mut out = Vec::new();
        for rule in &self.rules {
            let mut candidates: Vec<(usize, usize)> = Vec::new();
            for pattern in &rule.patterns {
                for caps in pattern.regex.captures_iter(text) {
                    let m = if pattern.has_pii_group {
                        match caps.name("pii") {
                            Some(m) => m,
                            None => continue,
                        }
                    } else {
                        caps.get(0).expect("group 0 always matches")
                    };
                    if m.start() == m.end() {
                        continue;
                    }
                    if pattern.validator.map_or(true, |v| v.check(m.as_str())) {
                        candidates.push((m.start(), m.end()));
                    }
                }
            }
            for (start, end) in longest_non_overlapping(candidates) {
                let span = index.span_from_bytes(start, end);
                let mut pair = ExtractionPair {
                    surface: text[start..end].to_string(),
                    pii_type: rule.pii_type,
                    span,
                    sensitivity: rule.base_sensitivity,
                };
                pair.sensitivity = score_with_words(&words, &pair, rule);
                out.push(pair);
            }
        }
        out.sort_by(|a, b| {
            (a.span.start, a.span.end, a.pii_type).cmp(&(b.span.start, b.span.end, b.pii_type))
        });
        out
    }

    pub fn to_findings(&self, detector_id: &str, pairs: &[ExtractionPair]) -> Vec<Finding> {
        pairs
            .iter()
            .map(|p| {
                let confidence = self.rule(p.pii_type).map_or(1.0, |r| r.confidence);
                Finding::new(detector_id, p.pii_type.category(), p.pii_type.tag(), confidence)
                    .with_span(p.span)
                    .with_sensitivity(p.sensitivity)
            })
            .collect()
    }
}

/// Keeps the longest of every group of overlapping byte ranges.
fn longest_non_overlapping(mut candidates: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    candidates.sort_by(|a, b| (b.1 - b.0).cmp(&(a.1 - a.0)).then(a.0.cmp(&b.0)));
    candidates.dedup();
    let mut kept: Vec<(usize, usize)> = Vec::new();
    for c in candidates {
        if kept.iter().all(|k| c.1 <= k.0 || k.1 <= c.0) {
            kept.push(c);
        }
    }
    kept.sort();
    kept
}

fn score_with_words(words: &[Token], pair: &ExtractionPair, rule: &PiiRule) -> Sensitivity {
    if rule.context_terms.is_empty() {
        return rule.base_sensitivity;
    }
    let before_end = words.partition_point(|w| w.span.end <= pair.span.start);
    let after_start = words.partition_point(|w| w.span.start < pair.span.end);
    let before = &words[before_end.saturating_sub(rule.context_window)..before_end];
    let after_end = (after_start + rule.context_window).min(words.len());
    let after = &words[after_start..after_end];

    let contains = |side: &[Token], term: &[String]| {
        !term.is_empty()
            && side
                .windows(term.len())
                .any(|w| w.iter().zip(term).all(|(word, t)| &word.text == t))
    };
    let total: f64 = rule
        .context_terms
        .iter()
        .filter(|(term, _)| contains(before, term) || contains(after, term))
        .map(|(_, weight)| weight)
        .sum();
    if total > rule.context_threshold {
        rule.base_sensitivity.raise()
    } else if total < -rule.context_threshold {
        rule.base_sensitivity.lower()
    } else {
        rule.base_sensitivity
    }
}

/// Contextual sensitivity: the rule's base level, moved one step up (down)
/// when the summed weights of context terms present within `context_window`
/// words on either side of the entity exceed `+threshold` (fall below
/// `-threshold`). Each distinct term counts once.
pub fn score_context(text: &str, pair: &ExtractionPair, rule: &PiiRule) -> Sensitivity {
    score_with_words(&tokens(text), pair, rule)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MaskStyle {
    /// `[EMAIL_ADDRESS]`
    MaskType,
    /// `█` repeated over the span length.
    RedactFull,
}

impl std::str::FromStr for MaskStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "MASK_TYPE" => Ok(MaskStyle::MaskType),
            "REDACT_FULL" => Ok(MaskStyle::RedactFull),
            other => Err(format!("unknown mask style `{other}`")),
        }
    }
}

/// A span to rewrite and the tag used for its placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Redaction {
    pub span: Span,
    pub tag: String,
    pub style: MaskStyle,
}

pub fn placeholder(tag: &str, style: MaskStyle, span_len: usize) -> String {
    match style {
        MaskStyle::MaskType => format!("[{}]", tag.to_uppercase()),
        MaskStyle::RedactFull => "█".repeat(span_len),
    }
}

/// Applies redactions right-to-left. Spans must be in range and pairwise
/// disjoint; text outside the spans is copied unchanged.
pub fn apply_redactions(text: &str, redactions: &[Redaction]) -> Result<String, RedactError> {
    let index = CharIndex::new(text);
    let mut sorted: Vec<&Redaction> = redactions.iter().collect();
    sorted.sort_by_key(|r| (r.span.start, r.span.end));
    for r in &sorted {
        if r.span.check(index.char_len()).is_err() {
            return Err(RedactError::OutOfRange(r.span));
        }
    }
    for pair in sorted.windows(2) {
        if pair[0].span.overlaps(&pair[1].span) {
            return Err(RedactError::OverlappingSpans(pair[0].span, pair[1].span));
        }
    }
    let mut out = text.to_string();
    for r in sorted.iter().rev() {
        let range = index.byte_range(r.span);
        out.replace_range(range, &placeholder(&r.tag, r.style, r.span.len()));
    }
    Ok(out)
}

pub fn redact(text: &str, pairs: &[ExtractionPair], style: MaskStyle) -> Result<String, RedactError> {
    let redactions: Vec<Redaction> = pairs
        .iter()
        .map(|p| Redaction {
            span: p.span,
            tag: p.pii_type.tag().to_string(),
            style,
        })
        .collect();
    apply_redactions(text, &redactions)
}

/// Collapses overlapping pairs (of any type) to the longest of each group,
/// so the result can be passed to [`redact`].
pub fn merge_overlapping(pairs: &[ExtractionPair]) -> Vec<ExtractionPair> {
    let mut sorted: Vec<&ExtractionPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| b.span.len().cmp(&a.span.len()).then(a.span.start.cmp(&b.span.start)));
    let mut kept: Vec<ExtractionPair> = Vec::new();
    for p in sorted {
        if kept.iter().all(|k| !k.span.overlaps(&p.span)) {
            kept.push(p.clone());
        }
    }
    kept.sort_by_key(|p| (p.span.start, p.span.end));
    kept
}

/// [`PiiExtractor`] as a gateway detector.
pub struct PiiDetector {
    detector_id: String,
    extractor: PiiExtractor,
}

impl PiiDetector {
    pub fn new(detector_id: impl Into<String>, extractor: PiiExtractor) -> Self {
        PiiDetector {
            detector_id: detector_id.into(),
            extractor,
        }
    }

    pub fn categories() -> Vec<String> {
        PiiType::ALL.iter().map(|t| t.category()).collect()
    }
}

impl Detector for PiiDetector {
    fn detect(&self, text: &str, _request_id: &str) -> Result<Vec<Finding>, DetectorError> {
        let pairs = self.extractor.extract(text);
        Ok(self.extractor.to_findings(&self.detector_id, &pairs))
    }
}
