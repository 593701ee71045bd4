//! Domain vocabulary shared by detectors, the policy manager and the gateway.
//!
//! Offsets are always counted in unicode scalar values (`char`s), never in
//! bytes, so a [`Span`] produced here means the same thing to a Python or
//! JavaScript client reading the wire format.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which side of the model exchange a payload belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Direction {
    Prompt,
    Response,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Prompt => "PROMPT",
            Direction::Response => "RESPONSE",
        }
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "PROMPT" => Ok(Direction::Prompt),
            "RESPONSE" => Ok(Direction::Response),
            other => Err(format!("unknown direction `{other}`")),
        }
    }
}

/// Three-level privacy / sensitivity scale, ordered `Low < Moderate < High`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Sensitivity {
    Low,
    Moderate,
    High,
}

impl Sensitivity {
    pub fn raise(self) -> Self {
        match self {
            Sensitivity::Low => Sensitivity::Moderate,
            _ => Sensitivity::High,
        }
    }

    pub fn lower(self) -> Self {
        match self {
            Sensitivity::High => Sensitivity::Moderate,
            _ => Sensitivity::Low,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Sensitivity::Low => "LOW",
            Sensitivity::Moderate => "MODERATE",
            Sensitivity::High => "HIGH",
        }
    }
}

impl FromStr for Sensitivity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "LOW" => Ok(Sensitivity::Low),
            "MODERATE" => Ok(Sensitivity::Moderate),
            "HIGH" => Ok(Sensitivity::High),
            other => Err(format!("unknown sensitivity `{other}`")),
        }
    }
}

/// Final outcome of a shield call. The derived order is the combination
/// order: `Pass < Warn < Mask < Block`.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    #[default]
    Pass,
    Warn,
    Mask,
    Block,
}

impl Decision {
    /// Combining two decisions keeps the more restrictive one.
    pub fn combine(self, other: Decision) -> Decision {
        self.max(other)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Decision::Pass => "PASS",
            Decision::Warn => "WARN",
            Decision::Mask => "MASK",
            Decision::Block => "BLOCK",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Decision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "PASS" => Ok(Decision::Pass),
            "WARN" => Ok(Decision::Warn),
            "MASK" => Ok(Decision::Mask),
            "BLOCK" => Ok(Decision::Block),
            other => Err(format!("unknown action `{other}`")),
        }
    }
}

/// Half-open `[start, end)` range over the unicode scalar values of a text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    /// Checks the span invariants against a text of `text_len` chars.
    pub fn check(&self, text_len: usize) -> Result<(), SpanError> {
        if self.start < self.end && self.end <= text_len {
            Ok(())
        } else {
            Err(SpanError::OutOfRange {
                start: self.start,
                end: self.end,
                len: text_len,
            })
        }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpanError {
    #[error("SPAN_OUT_OF_RANGE: span [{start}, {end}) does not fit a text of {len} chars")]
    OutOfRange { start: usize, end: usize, len: usize },
}

/// Returns the sub-string of `text` covered by `span`, in char offsets.
pub fn slice<'a>(text: &'a str, span: Span) -> Result<&'a str, SpanError> {
    let index = CharIndex::new(text);
    span.check(index.char_len())?;
    Ok(&text[index.byte_offset(span.start)..index.byte_offset(span.end)])
}

/// Translation table between byte offsets and char offsets of one text.
#[derive(Debug, Clone)]
pub struct CharIndex {
    /// Byte offset of every char, plus a trailing entry for `text.len()`.
    char_to_byte: Vec<usize>,
}

impl CharIndex {
    pub fn new(text: &str) -> Self {
        let mut char_to_byte: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        char_to_byte.push(text.len());
        CharIndex { char_to_byte }
    }

    pub fn char_len(&self) -> usize {
        self.char_to_byte.len() - 1
    }

    /// Byte offset of the char at `char_offset` (or `text.len()` at the end).
    pub fn byte_offset(&self, char_offset: usize) -> usize {
        self.char_to_byte[char_offset.min(self.char_len())]
    }

    /// Char offset for a byte offset that lies on a char boundary.
    pub fn char_offset(&self, byte_offset: usize) -> usize {
        match self.char_to_byte.binary_search(&byte_offset) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
    }

    pub fn span_from_bytes(&self, start: usize, end: usize) -> Span {
        Span::new(self.char_offset(start), self.char_offset(end))
    }

    pub fn byte_range(&self, span: Span) -> std::ops::Range<usize> {
        self.byte_offset(span.start)..self.byte_offset(span.end)
    }
}

/// One detector observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub detector_id: String,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
    pub score: f64,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<Sensitivity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
}

impl Finding {
    pub fn new(
        detector_id: impl Into<String>,
        category: impl Into<String>,
        label: impl Into<String>,
        score: f64,
    ) -> Self {
        Finding {
            detector_id: detector_id.into(),
            category: category.into(),
            span: None,
            score,
            label: label.into(),
            sensitivity: None,
            evidence: None,
        }
    }

    pub fn with_span(mut self, span: Span) -> Self {
        self.span = Some(span);
        self
    }

    pub fn with_sensitivity(mut self, sensitivity: Sensitivity) -> Self {
        self.sensitivity = Some(sensitivity);
        self
    }

    pub fn with_evidence(mut self, evidence: impl Into<String>) -> Self {
        self.evidence = Some(evidence.into());
        self
    }

    /// Score in `[0, 1]` and, when present, a span that fits `text_len`.
    pub fn is_well_formed(&self, text_len: usize) -> bool {
        (0.0..=1.0).contains(&self.score)
            && self.span.map_or(true, |s| s.check(text_len).is_ok())
    }
}

/// The closed registry of PII categories understood by the built-in extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiiType {
    PersonName,
    StreetAddress,
    DateOfBirth,
    PhoneNumber,
    EmailAddress,
    SocialMediaHandle,
    BankAccountNumber,
    CreditCardNumber,
    TaxId,
    Ssn,
    PassportNumber,
    DriversLicenseNumber,
    /// Medical record numbers and health insurance member ids.
    HealthIdentifier,
}

impl PiiType {
    pub const ALL: [PiiType; 13] = [
        PiiType::PersonName,
        PiiType::StreetAddress,
        PiiType::DateOfBirth,
        PiiType::PhoneNumber,
        PiiType::EmailAddress,
        PiiType::SocialMediaHandle,
        PiiType::BankAccountNumber,
        PiiType::CreditCardNumber,
        PiiType::TaxId,
        PiiType::Ssn,
        PiiType::PassportNumber,
        PiiType::DriversLicenseNumber,
        PiiType::HealthIdentifier,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            PiiType::PersonName => "person_name",
            PiiType::StreetAddress => "street_address",
            PiiType::DateOfBirth => "date_of_birth",
            PiiType::PhoneNumber => "phone_number",
            PiiType::EmailAddress => "email_address",
            PiiType::SocialMediaHandle => "social_media_handle",
            PiiType::BankAccountNumber => "bank_account_number",
            PiiType::CreditCardNumber => "credit_card_number",
            PiiType::TaxId => "tax_id",
            PiiType::Ssn => "ssn",
            PiiType::PassportNumber => "passport_number",
            PiiType::DriversLicenseNumber => "drivers_license_number",
            PiiType::HealthIdentifier => "health_identifier",
        }
    }

    /// Finding category, e.g. `pii.email_address`.
    pub fn category(&self) -> String {
        format!("pii.{}", self.tag())
    }
}

impl fmt::Display for PiiType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for PiiType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PiiType::ALL
            .iter()
            .copied()
            .find(|t| t.tag() == s)
            .ok_or_else(|| format!("unknown PII type `{s}`"))
    }
}

/// A typed sub-span of the source text found by the PII extractor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionPair {
    pub surface: String,
    pub pii_type: PiiType,
    pub span: Span,
    pub sensitivity: Sensitivity,
}

/// Jurisdiction tag such as `gdpr`, `ccpa` or `default`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Jurisdiction(String);

impl Jurisdiction {
    pub const DEFAULT: &'static str = "default";

    pub fn parse(tag: &str) -> Result<Self, ValidationError> {
        let mut chars = tag.chars();
        let well_formed = matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
            && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-')
            && tag.len() <= 32;
        if well_formed {
            Ok(Jurisdiction(tag.to_string()))
        } else {
            Err(ValidationError::BadJurisdictionTag(tag.to_string()))
        }
    }

    pub fn default_tag() -> Self {
        Jurisdiction(Self::DEFAULT.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_default(&self) -> bool {
        self.0 == Self::DEFAULT
    }
}

impl TryFrom<String> for Jurisdiction {
    type Error = ValidationError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Jurisdiction::parse(&value)
    }
}

impl From<Jurisdiction> for String {
    fn from(value: Jurisdiction) -> Self {
        value.0
    }
}

impl fmt::Display for Jurisdiction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("EMPTY_TEXT: text is empty after trimming whitespace")]
    EmptyText,
    #[error("UNKNOWN_POLICY_ID: policy `{0}` is not loaded")]
    UnknownPolicyId(String),
    #[error("BAD_JURISDICTION_TAG: `{0}` is not a valid jurisdiction tag")]
    BadJurisdictionTag(String),
    #[error("NO_POLICY: at least one policy id is required")]
    NoPolicy,
}

impl ValidationError {
    pub fn code(&self) -> &'static str {
        match self {
            ValidationError::EmptyText => "EMPTY_TEXT",
            ValidationError::UnknownPolicyId(_) => "UNKNOWN_POLICY_ID",
            ValidationError::BadJurisdictionTag(_) => "BAD_JURISDICTION_TAG",
            ValidationError::NoPolicy => "NO_POLICY",
        }
    }
}

/// One payload to shield.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShieldRequest {
    pub request_id: String,
    pub text: String,
    pub direction: Direction,
    pub tenant: String,
    pub jurisdiction: String,
    pub policy_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector_allowlist: Option<Vec<String>>,
}

impl ShieldRequest {
    pub fn new(text: impl Into<String>, direction: Direction) -> Self {
        ShieldRequest {
            request_id: uuid::Uuid::new_v4().to_string(),
            text: text.into(),
            direction,
            tenant: "default".to_string(),
            jurisdiction: Jurisdiction::DEFAULT.to_string(),
            policy_ids: vec!["default".to_string()],
            detector_allowlist: None,
        }
    }

    pub fn with_policies<I, S>(mut self, ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.policy_ids = ids.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_jurisdiction(mut self, tag: impl Into<String>) -> Self {
        self.jurisdiction = tag.into();
        self
    }

    pub fn with_detectors<I, S>(mut self, ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.detector_allowlist = Some(ids.into_iter().map(Into::into).collect());
        self
    }

    /// Checks every request invariant; `policy_known` resolves policy ids.
    /// The first violated field is reported.
    pub fn validate(&self, policy_known: impl Fn(&str) -> bool) -> Result<(), ValidationError> {
        if self.text.trim().is_empty() {
            return Err(ValidationError::EmptyText);
        }
        Jurisdiction::parse(&self.jurisdiction)?;
        if self.policy_ids.is_empty() {
            return Err(ValidationError::NoPolicy);
        }
        if let Some(missing) = self.policy_ids.iter().find(|id| !policy_known(id)) {
            return Err(ValidationError::UnknownPolicyId(missing.clone()));
        }
        Ok(())
    }
}

/// Audit record of one rule that fired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleFiring {
    pub policy_id: String,
    pub rule_id: String,
    pub action: Decision,
    /// Indices into [`Verdict::findings`].
    pub matched: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    /// Spans of the input text this firing rewrote.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masked_spans: Vec<Span>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    pub output_text: String,
    pub warnings: Vec<String>,
    pub audit: Vec<RuleFiring>,
    pub timings: BTreeMap<String, f64>,
    pub degraded: Vec<String>,
    #[serde(default)]
    pub findings: Vec<Finding>,
}
