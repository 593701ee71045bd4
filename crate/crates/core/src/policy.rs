//! Policy manager: turns the pooled findings of all detectors into a verdict.
//!
//! Three stages run in order:
//!
//! 1. **inference** ([`infer`]) assigns every extraction finding a privacy
//!    level, the maximum of the detector's own sensitivity and the
//!    jurisdiction's override table;
//! 2. **decision** ([`decide`]) evaluates every rule of a template and
//!    records each one that fires;
//! 3. **action** ([`act`]) applies the strongest action to the text.
//!
//! # Predicate grammar
//!
//! ```text
//! expr   := and ( "OR" and )*
//! and    := unary ( "AND" unary )*
//! unary  := "NOT" unary | "(" expr ")" | atom
//! atom   := "category" "==" STRING
//!         | "score" CMP NUMBER
//!         | "sensitivity" CMP ( "LOW" | "MODERATE" | "HIGH" )
//!         | "direction" "==" ( "PROMPT" | "RESPONSE" )
//!         | "SAME_SENTENCE" "(" STRING "," STRING ")"
//! CMP    := ">=" | ">" | "<=" | "<" | "==" | "!="
//! ```
//!
//! Category strings match exactly or, with a trailing `*`, by prefix. A rule
//! fires when at least one finding satisfies its predicate; those findings
//! are the rule's matches. `SAME_SENTENCE(a, b)` holds for a finding of
//! category `a` (or `b`) that shares a sentence with a different finding of
//! the other category. `NOT` may only wrap score and sensitivity
//! comparisons, which keeps every predicate monotone: adding findings can
//! only add matches, never remove them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Spanned;

use crate::model::{Decision, Direction, Finding, RuleFiring, Sensitivity, Span, Verdict};
use crate::pii::{apply_redactions, MaskStyle, Redaction};
use crate::text::SentenceSplitter;

const BUILTIN_POLICIES: [&str; 3] = [
    include_str!("../data/policies/default.toml"),
    include_str!("../data/policies/strict.toml"),
    include_str!("../data/policies/gdpr.toml"),
];
const BUILTIN_JURISDICTIONS: [&str; 2] = [
    include_str!("../data/jurisdictions/gdpr.toml"),
    include_str!("../data/jurisdictions/ccpa.toml"),
];

/// Category pattern: exact name, or prefix when it ends in `*`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CategoryMatcher(String);

impl CategoryMatcher {
    pub fn new(pattern: impl Into<String>) -> Self {
        CategoryMatcher(pattern.into())
    }

    pub fn matches(&self, category: &str) -> bool {
        match self.0.strip_suffix('*') {
            Some(prefix) => category.starts_with(prefix),
            None => self.0 == category,
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Ge,
    Gt,
    Le,
    Lt,
    Eq,
    Ne,
}

impl CmpOp {
    fn apply<T: PartialOrd>(&self, lhs: T, rhs: T) -> bool {
        match self {
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
        }
    }

    fn symbol(&self) -> &'static str {
        match self {
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Lt => "<",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    Category(CategoryMatcher),
    Score(CmpOp, f64),
    Sensitivity(CmpOp, Sensitivity),
    Direction(Direction),
    SameSentence(CategoryMatcher, CategoryMatcher),
    And(Box<Predicate>, Box<Predicate>),
    Or(Box<Predicate>, Box<Predicate>),
    Not(Box<Predicate>),
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Category(m) => write!(f, "category == {:?}", m.as_str()),
            Predicate::Score(op, v) => write!(f, "score {} {v}", op.symbol()),
            Predicate::Sensitivity(op, s) => write!(f, "sensitivity {} {}", op.symbol(), s.as_str()),
            Predicate::Direction(d) => write!(f, "direction == {}", d.as_str()),
            Predicate::SameSentence(a, b) => {
                write!(f, "SAME_SENTENCE({:?}, {:?})", a.as_str(), b.as_str())
            }
            Predicate::And(a, b) => write!(f, "({a} AND {b})"),
            Predicate::Or(a, b) => write!(f, "({a} OR {b})"),
            Predicate::Not(a) => write!(f, "NOT {a}"),
        }
    }
}

impl Predicate {
    /// Category patterns named anywhere in the predicate.
    pub fn categories(&self) -> Vec<&CategoryMatcher> {
        let mut out = Vec::new();
        self.collect_categories(&mut out);
        out
    }

    fn collect_categories<'a>(&'a self, out: &mut Vec<&'a CategoryMatcher>) {
        match self {
            Predicate::Category(m) => out.push(m),
            Predicate::SameSentence(a, b) => {
                out.push(a);
                out.push(b);
            }
            Predicate::And(a, b) | Predicate::Or(a, b) => {
                a.collect_categories(out);
                b.collect_categories(out);
            }
            Predicate::Not(a) => a.collect_categories(out),
            _ => {}
        }
    }

    fn only_comparisons(&self) -> bool {
        match self {
            Predicate::Score(..) | Predicate::Sensitivity(..) => true,
            Predicate::And(a, b) | Predicate::Or(a, b) => a.only_comparisons() && b.only_comparisons(),
            Predicate::Not(a) => a.only_comparisons(),
            _ => false,
        }
    }

    /// Rejects `NOT` over anything but score / sensitivity comparisons.
    fn check_monotone(&self) -> Result<(), String> {
        match self {
            Predicate::Not(inner) if !inner.only_comparisons() => Err(format!(
                "NOT may only negate score or sensitivity comparisons, found `{self}`"
            )),
            Predicate::And(a, b) | Predicate::Or(a, b) => {
                a.check_monotone()?;
                b.check_monotone()
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    Op(CmpOp),
    LParen,
    RParen,
    Comma,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateError {
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for PredicateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (at offset {})", self.message, self.offset)
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, PredicateError> {
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let err = |offset: usize, message: String| PredicateError { offset, message };
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '(' => {
                out.push((Tok::LParen, pos));
                i += 1;
            }
            ')' => {
                out.push((Tok::RParen, pos));
                i += 1;
            }
            ',' => {
                out.push((Tok::Comma, pos));
                i += 1;
            }
            '"' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        Some((_, '"')) => break,
                        Some((_, ch)) => s.push(*ch),
                        None => return Err(err(pos, "unterminated string".into())),
                    }
                    i += 1;
                }
                i += 1;
                out.push((Tok::Str(s), pos));
            }
            '>' | '<' | '=' | '!' => {
                let next = chars.get(i + 1).map(|(_, c)| *c);
                let (op, width) = match (c, next) {
                    ('>', Some('=')) => (CmpOp::Ge, 2),
                    ('<', Some('=')) => (CmpOp::Le, 2),
                    ('=', Some('=')) => (CmpOp::Eq, 2),
                    ('!', Some('=')) => (CmpOp::Ne, 2),
                    ('>', _) => (CmpOp::Gt, 1),
                    ('<', _) => (CmpOp::Lt, 1),
                    _ => return Err(err(pos, format!("unexpected `{c}`"))),
                };
                out.push((Tok::Op(op), pos));
                i += width;
            }
            c if c.is_ascii_digit() || c == '.' || c == '-' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].1.is_ascii_digit() || chars[i].1 == '.' || (i == start && chars[i].1 == '-'))
                {
                    i += 1;
                }
                let text: String = chars[start..i].iter().map(|(_, c)| c).collect();
                let n = text
                    .parse::<f64>()
                    .map_err(|_| err(pos, format!("bad number `{text}`")))?;
                out.push((Tok::Num(n), pos));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].1.is_alphanumeric() || chars[i].1 == '_') {
                    i += 1;
                }
                let text: String = chars[start..i].iter().map(|(_, c)| c).collect();
                out.push((Tok::Ident(text), pos));
            }
            other => return Err(err(pos, format!("unexpected `{other}`"))),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(_, o)| *o)
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T, PredicateError> {
        Err(PredicateError {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn keyword(&self, word: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(w)) if w.eq_ignore_ascii_case(word))
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), PredicateError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(format!("expected {what}"))
        }
    }

    fn string(&mut self) -> Result<String, PredicateError> {
        match self.peek() {
            Some(Tok::Str(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.fail("expected a quoted string"),
        }
    }

    fn op(&mut self) -> Result<CmpOp, PredicateError> {
        match self.peek() {
            Some(Tok::Op(op)) => {
                let op = *op;
                self.pos += 1;
                Ok(op)
            }
            _ => self.fail("expected a comparison operator"),
        }
    }

    fn expr(&mut self) -> Result<Predicate, PredicateError> {
        let mut lhs = self.and()?;
        while self.keyword("OR") {
            self.pos += 1;
            let rhs = self.and()?;
            lhs = Predicate::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Predicate, PredicateError> {
        let mut lhs = self.unary()?;
        while self.keyword("AND") {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Predicate::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Predicate, PredicateError> {
        if self.keyword("NOT") {
            self.pos += 1;
            return Ok(Predicate::Not(Box::new(self.unary()?)));
        }
        if self.peek() == Some(&Tok::LParen) {
            self.pos += 1;
            let inner = self.expr()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(inner);
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Predicate, PredicateError> {
        let word = match self.peek() {
            Some(Tok::Ident(w)) => w.clone(),
            _ => return self.fail("expected an atom"),
        };
        let at = self.offset();
        self.pos += 1;
        match word.to_ascii_lowercase().as_str() {
            "category" => {
                if self.op()? != CmpOp::Eq {
                    return Err(PredicateError {
                        offset: at,
                        message: "category only supports `==`".into(),
                    });
                }
                Ok(Predicate::Category(CategoryMatcher::new(self.string()?)))
            }
            "score" => {
                let op = self.op()?;
                match self.next() {
                    Some(Tok::Num(n)) if (0.0..=1.0).contains(&n) => Ok(Predicate::Score(op, n)),
                    _ => {
                        self.pos -= 1;
                        self.fail("expected a score between 0 and 1")
                    }
                }
            }
            "sensitivity" => {
                let op = self.op()?;
                match self.next() {
                    Some(Tok::Ident(level)) => match level.parse::<Sensitivity>() {
                        Ok(s) => Ok(Predicate::Sensitivity(op, s)),
                        Err(e) => {
                            self.pos -= 1;
                            self.fail(e)
                        }
                    },
                    _ => {
                        self.pos -= 1;
                        self.fail("expected LOW, MODERATE or HIGH")
                    }
                }
            }
            "direction" => {
                if self.op()? != CmpOp::Eq {
                    return Err(PredicateError {
                        offset: at,
                        message: "direction only supports `==`".into(),
                    });
                }
                match self.next() {
                    Some(Tok::Ident(d)) => match d.parse::<Direction>() {
                        Ok(d) => Ok(Predicate::Direction(d)),
                        Err(e) => {
                            self.pos -= 1;
                            self.fail(e)
                        }
                    },
                    _ => {
                        self.pos -= 1;
                        self.fail("expected PROMPT or RESPONSE")
                    }
                }
            }
            "same_sentence" => {
                self.expect(Tok::LParen, "`(`")?;
                let a = self.string()?;
                self.expect(Tok::Comma, "`,`")?;
                let b = self.string()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(Predicate::SameSentence(
                    CategoryMatcher::new(a),
                    CategoryMatcher::new(b),
                ))
            }
            _ => Err(PredicateError {
                offset: at,
                message: format!("unknown atom `{word}`"),
            }),
        }
    }
}

/// Parses and checks a rule predicate.
pub fn parse_predicate(src: &str) -> Result<Predicate, PredicateError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: src.len(),
    };
    let pred = p.expr()?;
    if p.pos < p.toks.len() {
        return p.fail("unexpected trailing input");
    }
    pred.check_monotone().map_err(|message| PredicateError {
        offset: 0,
        message,
    })?;
    Ok(pred)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CategoryKind {
    Classification,
    Extraction,
    Comparison,
}

/// Which finding categories carry spans. Used to validate MASK rules.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CategoryCatalog {
    kinds: BTreeMap<String, CategoryKind>,
}

impl CategoryCatalog {
    /// Built-in detector categories: the 13 PII types, attribution, hap.
    pub fn builtin() -> Self {
        let mut c = CategoryCatalog::default();
        for t in crate::model::PiiType::ALL {
            c.insert(t.category(), CategoryKind::Extraction);
        }
        c.insert("attribution", CategoryKind::Comparison);
        c.insert("hap", CategoryKind::Classification);
        c
    }

    pub fn insert(&mut self, category: impl Into<String>, kind: CategoryKind) {
        self.kinds.insert(category.into(), kind);
    }

    pub fn kind(&self, category: &str) -> Option<CategoryKind> {
        self.kinds.get(category).copied()
    }

    /// True when the pattern covers at least one spanned (extraction or
    /// comparison) category.
    pub fn covers_spanned(&self, matcher: &CategoryMatcher) -> bool {
        self.kinds
            .iter()
            .any(|(c, k)| *k != CategoryKind::Classification && matcher.matches(c))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRule {
    pub rule_id: String,
    pub predicate: Predicate,
    /// The predicate as written in the policy file.
    pub source: String,
    pub action: Decision,
    pub mask_style: Option<MaskStyle>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTemplate {
    pub policy_id: String,
    pub jurisdiction: String,
    pub rules: Vec<PolicyRule>,
    pub default_action: Decision,
    pub block_message: String,
    /// The original document text.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyErrorKind {
    Parse,
    MalformedPredicate,
    DuplicateRuleId,
    UnknownAction,
    UnknownMaskStyle,
    MaskWithoutSpannedCategory,
    BadJurisdiction,
    DuplicatePolicyId,
    Io,
}

impl PolicyErrorKind {
    pub fn code(&self) -> &'static str {
        match self {
            PolicyErrorKind::Parse => "PARSE_ERROR",
            PolicyErrorKind::MalformedPredicate => "MALFORMED_PREDICATE",
            PolicyErrorKind::DuplicateRuleId => "DUPLICATE_RULE_ID",
            PolicyErrorKind::UnknownAction => "UNKNOWN_ACTION",
            PolicyErrorKind::UnknownMaskStyle => "UNKNOWN_MASK_STYLE",
            PolicyErrorKind::MaskWithoutSpannedCategory => "MASK_WITHOUT_EXTRACTION_CATEGORY",
            PolicyErrorKind::BadJurisdiction => "BAD_JURISDICTION_TAG",
            PolicyErrorKind::DuplicatePolicyId => "DUPLICATE_POLICY_ID",
            PolicyErrorKind::Io => "IO_FAILURE",
        }
    }
}

/// A policy document rejected at load time, with its position.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}{}: {message}{}", kind.code(), location(.file, .line, .column), "")]
pub struct PolicyError {
    pub kind: PolicyErrorKind,
    pub message: String,
    pub file: Option<String>,
    pub line: Option<usize>,
    pub column: Option<usize>,
}

fn location(file: &Option<String>, line: &Option<usize>, column: &Option<usize>) -> String {
    let mut s = String::new();
    if let Some(f) = file {
        s.push_str(&format!(" in {f}"));
    }
    if let Some(l) = line {
        s.push_str(&format!(" at line {l}"));
        if let Some(c) = column {
            s.push_str(&format!(", column {c}"));
        }
    }
    s
}

impl PolicyError {
    fn at(kind: PolicyErrorKind, message: impl Into<String>, src: &str, byte: usize) -> Self {
        let (line, column) = line_col(src, byte);
        PolicyError {
            kind,
            message: message.into(),
            file: None,
            line: Some(line),
            column: Some(column),
        }
    }

    fn in_file(mut self, file: &Path) -> Self {
        self.file = Some(file.display().to_string());
        self
    }
}

fn line_col(src: &str, byte: usize) -> (usize, usize) {
    let before = &src[..byte.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
    (line, column)
}

#[derive(Deserialize)]
struct RawRule {
    id: Spanned<String>,
    when: Spanned<String>,
    action: Spanned<String>,
    #[serde(default)]
    mask_style: Option<Spanned<String>>,
    #[serde(default)]
    message: Option<String>,
}

#[derive(Deserialize)]
struct RawPolicy {
    policy_id: Spanned<String>,
    #[serde(default)]
    jurisdiction: Option<Spanned<String>>,
    default_action: Spanned<String>,
    #[serde(default)]
    block_message: Option<String>,
    #[serde(default)]
    rules: Vec<RawRule>,
}

const DEFAULT_BLOCK_MESSAGE: &str = "This content was blocked by policy.";

impl PolicyTemplate {
    /// Parses and validates one policy document; the first error wins.
    pub fn from_toml(src: &str, catalog: &CategoryCatalog) -> Result<Self, PolicyError> {
        let raw: RawPolicy = toml::from_str(src).map_err(|e| {
            let byte = e.span().map_or(0, |s| s.start);
            PolicyError::at(PolicyErrorKind::Parse, e.message().to_string(), src, byte)
        })?;
        let jurisdiction = match &raw.jurisdiction {
            Some(j) => {
                crate::model::Jurisdiction::parse(j.get_ref()).map_err(|e| {
                    PolicyError::at(PolicyErrorKind::BadJurisdiction, e.to_string(), src, j.span().start)
                })?;
                j.get_ref().clone()
            }
            None => crate::model::Jurisdiction::DEFAULT.to_string(),
        };
        let parse_action = |s: &Spanned<String>| {
            s.get_ref().parse::<Decision>().map_err(|e| {
                PolicyError::at(PolicyErrorKind::UnknownAction, e, src, s.span().start)
            })
        };
        let default_action = parse_action(&raw.default_action)?;

        let mut ids = BTreeSet::new();
        let mut rules = Vec::with_capacity(raw.rules.len());
        for r in &raw.rules {
            if !ids.insert(r.id.get_ref().clone()) {
                return Err(PolicyError::at(
                    PolicyErrorKind::DuplicateRuleId,
                    format!("rule id `{}` is used twice", r.id.get_ref()),
                    src,
                    r.id.span().start,
                ));
            }
            let predicate = parse_predicate(r.when.get_ref()).map_err(|e| {
                // +1 skips the opening quote of the TOML string.
                PolicyError::at(
                    PolicyErrorKind::MalformedPredicate,
                    format!("rule `{}`: {}", r.id.get_ref(), e.message),
                    src,
                    r.when.span().start + 1 + e.offset,
                )
            })?;
            let action = parse_action(&r.action)?;
            let mask_style = r
                .mask_style
                .as_ref()
                .map(|m| {
                    m.get_ref().parse::<MaskStyle>().map_err(|e| {
                        PolicyError::at(PolicyErrorKind::UnknownMaskStyle, e, src, m.span().start)
                    })
                })
                .transpose()?;
            if action == Decision::Mask
                && !predicate.categories().iter().any(|m| catalog.covers_spanned(m))
            {
                return Err(PolicyError::at(
                    PolicyErrorKind::MaskWithoutSpannedCategory,
                    format!(
                        "MASK rule `{}` names no extraction category, so it has nothing to mask",
                        r.id.get_ref()
                    ),
                    src,
                    r.when.span().start,
                ));
            }
            rules.push(PolicyRule {
                rule_id: r.id.get_ref().clone(),
                predicate,
                source: r.when.get_ref().clone(),
                action,
                mask_style,
                message: r.message.clone(),
            });
        }
        Ok(PolicyTemplate {
            policy_id: raw.policy_id.into_inner(),
            jurisdiction,
            rules,
            default_action,
            block_message: raw
                .block_message
                .unwrap_or_else(|| DEFAULT_BLOCK_MESSAGE.to_string()),
            source: src.to_string(),
        })
    }

    pub fn summary(&self) -> PolicySummary {
        PolicySummary {
            policy_id: self.policy_id.clone(),
            jurisdiction: self.jurisdiction.clone(),
            default_action: self.default_action,
            block_message: self.block_message.clone(),
            rules: self
                .rules
                .iter()
                .map(|r| RuleSummary {
                    id: r.rule_id.clone(),
                    when: r.source.clone(),
                    action: r.action,
                    mask_style: r.mask_style,
                    message: r.message.clone(),
                })
                .collect(),
        }
    }
}

/// JSON view of a template for the management endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy_id: String,
    pub jurisdiction: String,
    pub default_action: Decision,
    pub block_message: String,
    pub rules: Vec<RuleSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSummary {
    pub id: String,
    pub when: String,
    pub action: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_style: Option<MaskStyle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Per-jurisdiction category → minimum privacy level table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OverrideTable {
    pub jurisdiction: String,
    levels: Vec<(CategoryMatcher, Sensitivity)>,
}

#[derive(Deserialize)]
struct RawOverrideTable {
    jurisdiction: String,
    #[serde(default)]
    levels: BTreeMap<String, String>,
}

impl OverrideTable {
    pub fn from_toml(src: &str) -> Result<Self, PolicyError> {
        let raw: RawOverrideTable = toml::from_str(src).map_err(|e| {
            let byte = e.span().map_or(0, |s| s.start);
            PolicyError::at(PolicyErrorKind::Parse, e.message().to_string(), src, byte)
        })?;
        let mut levels = Vec::new();
        for (cat, level) in raw.levels {
            let level = level.parse::<Sensitivity>().map_err(|e| PolicyError {
                kind: PolicyErrorKind::Parse,
                message: e,
                file: None,
                line: None,
                column: None,
            })?;
            levels.push((CategoryMatcher::new(cat), level));
        }
        Ok(OverrideTable {
            jurisdiction: raw.jurisdiction,
            levels,
        })
    }

    pub fn with_level(mut self, category: &str, level: Sensitivity) -> Self {
        self.levels.push((CategoryMatcher::new(category), level));
        self
    }

    /// Highest level among the entries matching `category`.
    pub fn level_for(&self, category: &str) -> Option<(Sensitivity, &str)> {
        self.levels
            .iter()
            .filter(|(m, _)| m.matches(category))
            .max_by_key(|(_, l)| *l)
            .map(|(m, l)| (*l, m.as_str()))
    }
}

/// Privacy level assigned to one finding by the inference stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivacyLevel {
    pub level: Sensitivity,
    pub rationale: String,
}

/// Parallel to the findings slice: `Some` for extraction findings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivacyAssessment {
    pub levels: Vec<Option<PrivacyLevel>>,
}

fn is_extraction(finding: &Finding, catalog: &CategoryCatalog) -> bool {
    match catalog.kind(&finding.category) {
        Some(kind) => kind == CategoryKind::Extraction,
        None => finding.sensitivity.is_some() && finding.span.is_some(),
    }
}

/// Inference stage: level = max(detector sensitivity, override table level).
pub fn infer(
    findings: &[Finding],
    overrides: Option<&OverrideTable>,
    catalog: &CategoryCatalog,
) -> PrivacyAssessment {
    let levels = findings
        .iter()
        .map(|f| {
            if !is_extraction(f, catalog) {
                return None;
            }
            let detector = f.sensitivity.unwrap_or(Sensitivity::Low);
            let mut out = PrivacyLevel {
                level: detector,
                rationale: format!("detector {}", f.detector_id),
            };
            if let Some(table) = overrides {
                if let Some((level, pattern)) = table.level_for(&f.category) {
                    if level > detector {
                        out = PrivacyLevel {
                            level,
                            rationale: format!("{} override {pattern}", table.jurisdiction),
                        };
                    }
                }
            }
            Some(out)
        })
        .collect();
    PrivacyAssessment { levels }
}

/// Everything a predicate may look at besides the finding itself.
pub struct EvalContext<'a> {
    pub findings: &'a [Finding],
    pub assessment: &'a PrivacyAssessment,
    pub direction: Direction,
    /// Sentence indices overlapped by each finding's span.
    pub sentences: Vec<Vec<usize>>,
}

impl<'a> EvalContext<'a> {
    pub fn new(
        text: &str,
        findings: &'a [Finding],
        assessment: &'a PrivacyAssessment,
        direction: Direction,
        splitter: &SentenceSplitter,
    ) -> Self {
        let partition = splitter.split(text);
        let sentences = findings
            .iter()
            .map(|f| match f.span {
                Some(span) => partition
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| s.overlaps(&span))
                    .map(|(i, _)| i)
                    .collect(),
                None => Vec::new(),
            })
            .collect();
        EvalContext {
            findings,
            assessment,
            direction,
            sentences,
        }
    }

    fn share_sentence(&self, a: usize, b: usize) -> bool {
        self.sentences[a].iter().any(|s| self.sentences[b].contains(s))
    }

    fn co_occurs(&self, idx: usize, other: &CategoryMatcher) -> bool {
        self.findings
            .iter()
            .enumerate()
            .any(|(j, g)| j != idx && other.matches(&g.category) && self.share_sentence(idx, j))
    }

    fn eval(&self, pred: &Predicate, idx: usize) -> bool {
        let f = &self.findings[idx];
        match pred {
            Predicate::Category(m) => m.matches(&f.category),
            Predicate::Score(op, v) => op.apply(f.score, *v),
            Predicate::Sensitivity(op, level) => self
                .assessment
                .levels
                .get(idx)
                .and_then(Option::as_ref)
                .map_or(false, |p| op.apply(p.level, *level)),
            Predicate::Direction(d) => self.direction == *d,
            Predicate::SameSentence(a, b) => {
                (a.matches(&f.category) && self.co_occurs(idx, b))
                    || (b.matches(&f.category) && self.co_occurs(idx, a))
            }
            Predicate::And(l, r) => self.eval(l, idx) && self.eval(r, idx),
            Predicate::Or(l, r) => self.eval(l, idx) || self.eval(r, idx),
            Predicate::Not(inner) => !self.eval(inner, idx),
        }
    }

    /// Indices of the findings satisfying `pred`.
    pub fn witnesses(&self, pred: &Predicate) -> Vec<usize> {
        (0..self.findings.len()).filter(|&i| self.eval(pred, i)).collect()
    }
}

/// Decision stage: every rule is evaluated; all firings are recorded.
pub fn decide(template: &PolicyTemplate, ctx: &EvalContext<'_>) -> Vec<RuleFiring> {
    template
        .rules
        .iter()
        .filter_map(|rule| {
            let matched = ctx.witnesses(&rule.predicate);
            (!matched.is_empty()).then(|| RuleFiring {
                policy_id: template.policy_id.clone(),
                rule_id: rule.rule_id.clone(),
                action: rule.action,
                matched,
                message: rule.message.clone(),
                masked_spans: Vec::new(),
            })
        })
        .collect()
}

/// Decision of one template: the strongest firing, never weaker than the
/// template's default action.
pub fn template_decision(template: &PolicyTemplate, firings: &[RuleFiring]) -> Decision {
    firings
        .iter()
        .filter(|f| f.policy_id == template.policy_id)
        .map(|f| f.action)
        .fold(template.default_action, Decision::combine)
}

fn placeholder_tag(finding: &Finding) -> String {
    finding
        .category
        .strip_prefix("pii.")
        .unwrap_or(&finding.category)
        .replace('.', "_")
}

/// Rule id used for the synthetic firing raised by a fail-closed detector.
pub fn fail_closed_rule_id(detector_id: &str) -> String {
    format!("fail-closed:{detector_id}")
}

/// Action stage. `templates` are the evaluated templates in request order;
/// `firings` come from [`decide`] (plus any synthetic fail-closed firings).
pub fn act(
    text: &str,
    mut firings: Vec<RuleFiring>,
    findings: Vec<Finding>,
    templates: &[&PolicyTemplate],
    timings: BTreeMap<String, f64>,
    degraded: Vec<String>,
) -> Verdict {
    let mut decision = templates
        .iter()
        .map(|t| template_decision(t, &firings))
        .fold(Decision::Pass, Decision::combine);
    decision = firings.iter().map(|f| f.action).fold(decision, Decision::combine);

    let warnings: Vec<String> = firings
        .iter()
        .filter(|f| f.action == Decision::Warn)
        .map(|f| {
            f.message
                .clone()
                .unwrap_or_else(|| format!("{}/{} matched", f.policy_id, f.rule_id))
        })
        .collect();

    let block_message = |firings: &[RuleFiring]| {
        templates
            .iter()
            .find(|t| template_decision(t, firings) == Decision::Block)
            .or(templates.first())
            .map_or_else(|| DEFAULT_BLOCK_MESSAGE.to_string(), |t| t.block_message.clone())
    };

    let output_text = match decision {
        Decision::Pass | Decision::Warn => text.to_string(),
        Decision::Block => block_message(&firings),
        Decision::Mask => match mask(text, &mut firings, &findings, templates) {
            Ok(masked) => masked,
            Err(e) => {
                firings.push(RuleFiring {
                    policy_id: templates.first().map_or_else(String::new, |t| t.policy_id.clone()),
                    rule_id: "internal:redaction".to_string(),
                    action: Decision::Block,
                    matched: Vec::new(),
                    message: Some(format!("redaction failed: {e}")),
                    masked_spans: Vec::new(),
                });
                decision = Decision::Block;
                block_message(&firings)
            }
        },
    };

    Verdict {
        decision,
        output_text,
        warnings,
        audit: firings,
        timings,
        degraded,
        findings,
    }
}

/// Redacts every span matched by a MASK firing. Overlapping spans are
/// merged into one redaction owned by the earliest firing involved.
fn mask(
    text: &str,
    firings: &mut [RuleFiring],
    findings: &[Finding],
    templates: &[&PolicyTemplate],
) -> Result<String, crate::pii::RedactError> {
    struct Piece {
        span: Span,
        tag: String,
        style: MaskStyle,
        owner: usize,
        longest: usize,
    }
    let style_of = |f: &RuleFiring| {
        templates
            .iter()
            .find(|t| t.policy_id == f.policy_id)
            .and_then(|t| t.rules.iter().find(|r| r.rule_id == f.rule_id))
            .and_then(|r| r.mask_style)
            .unwrap_or(MaskStyle::MaskType)
    };
    let mut pieces: Vec<Piece> = Vec::new();
    for (fi, firing) in firings.iter().enumerate() {
        if firing.action != Decision::Mask {
            continue;
        }
        let style = style_of(firing);
        for &idx in &firing.matched {
            if let Some(span) = findings[idx].span {
                pieces.push(Piece {
                    span,
                    tag: placeholder_tag(&findings[idx]),
                    style,
                    owner: fi,
                    longest: span.len(),
                });
            }
        }
    }
    pieces.sort_by_key(|p| (p.span.start, p.span.end, p.owner));
    let mut merged: Vec<Piece> = Vec::new();
    for p in pieces {
        if let Some(last) = merged.last_mut() {
            if p.span.start < last.span.end {
                last.span.end = last.span.end.max(p.span.end);
                if p.longest > last.longest {
                    last.longest = p.longest;
                    last.tag = p.tag;
                }
                if p.owner < last.owner {
                    last.owner = p.owner;
                    last.style = p.style;
                }
                continue;
            }
        }
        merged.push(p);
    }
    let redactions: Vec<Redaction> = merged
        .iter()
        .map(|p| Redaction {
            span: p.span,
            tag: p.tag.clone(),
            style: p.style,
        })
        .collect();
    let out = apply_redactions(text, &redactions)?;
    for p in merged {
        firings[p.owner].masked_spans.push(p.span);
    }
    Ok(out)
}

/// The loaded, validated set of policy templates and jurisdiction tables.
#[derive(Debug, Clone, Default)]
pub struct PolicySet {
    templates: BTreeMap<String, PolicyTemplate>,
    overrides: BTreeMap<String, OverrideTable>,
    catalog: CategoryCatalog,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvaluationError {
    #[error("UNKNOWN_POLICY_ID: `{0}`")]
    UnknownPolicyId(String),
    #[error("JURISDICTION_MISMATCH: policy `{policy}` is for `{policy_jurisdiction}`, request is `{request}`")]
    JurisdictionMismatch {
        policy: String,
        policy_jurisdiction: String,
        request: String,
    },
}

/// Inputs to one end-to-end policy evaluation.
pub struct EvaluationInput<'a> {
    pub text: &'a str,
    pub direction: Direction,
    pub jurisdiction: &'a str,
    pub policy_ids: &'a [String],
    pub findings: Vec<Finding>,
    pub timings: BTreeMap<String, f64>,
    pub degraded: Vec<String>,
    /// Degraded detectors configured to fail closed.
    pub fail_closed: Vec<String>,
}

impl PolicySet {
    pub fn new(catalog: CategoryCatalog) -> Self {
        let mut set = PolicySet {
            catalog,
            ..Default::default()
        };
        for raw in BUILTIN_JURISDICTIONS {
            let table = OverrideTable::from_toml(raw).expect("built-in jurisdiction table is valid");
            set.overrides.insert(table.jurisdiction.clone(), table);
        }
        set
    }

    /// Built-in templates (`default`, `strict`, `gdpr`) and jurisdiction tables.
    pub fn builtin() -> Self {
        Self::builtin_with(CategoryCatalog::builtin())
    }

    /// Built-ins validated against a caller-supplied catalog.
    pub fn builtin_with(catalog: CategoryCatalog) -> Self {
        let mut set = PolicySet::new(catalog);
        for raw in BUILTIN_POLICIES {
            set.insert_toml(raw).expect("built-in policy is valid");
        }
        set
    }

    pub fn catalog(&self) -> &CategoryCatalog {
        &self.catalog
    }

    /// Validates a document and adds (or replaces) its template.
    pub fn insert_toml(&mut self, src: &str) -> Result<&PolicyTemplate, PolicyError> {
        let template = PolicyTemplate::from_toml(src, &self.catalog)?;
        let id = template.policy_id.clone();
        self.templates.insert(id.clone(), template);
        Ok(&self.templates[&id])
    }

    pub fn insert_override(&mut self, table: OverrideTable) {
        self.overrides.insert(table.jurisdiction.clone(), table);
    }

    /// Loads every `*.toml` file of a directory (sorted by name). Any error
    /// rejects the whole load; a policy id defined twice is an error.
    pub fn load_dir(&mut self, dir: &Path) -> Result<Vec<String>, PolicyError> {
        let io = |e: std::io::Error| PolicyError {
            kind: PolicyErrorKind::Io,
            message: e.to_string(),
            file: Some(dir.display().to_string()),
            line: None,
            column: None,
        };
        let mut files: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "toml"))
            .collect();
        files.sort();
        let mut staged = self.clone();
        let mut loaded = Vec::new();
        for file in files {
            let src = std::fs::read_to_string(&file).map_err(|e| io(e).in_file(&file))?;
            let template =
                PolicyTemplate::from_toml(&src, &self.catalog).map_err(|e| e.in_file(&file))?;
            if loaded.contains(&template.policy_id) {
                return Err(PolicyError {
                    kind: PolicyErrorKind::DuplicatePolicyId,
                    message: format!("policy `{}` is defined twice", template.policy_id),
                    file: Some(file.display().to_string()),
                    line: None,
                    column: None,
                });
            }
            loaded.push(template.policy_id.clone());
            staged.templates.insert(template.policy_id.clone(), template);
        }
        *self = staged;
        Ok(loaded)
    }

    /// Loads a single policy file.
    pub fn load_file(&mut self, file: &Path) -> Result<String, PolicyError> {
        let src = std::fs::read_to_string(file).map_err(|e| PolicyError {
            kind: PolicyErrorKind::Io,
            message: e.to_string(),
            file: Some(file.display().to_string()),
            line: None,
            column: None,
        })?;
        self.insert_toml(&src)
            .map(|t| t.policy_id.clone())
            .map_err(|e| e.in_file(file))
    }

    pub fn get(&self, policy_id: &str) -> Option<&PolicyTemplate> {
        self.templates.get(policy_id)
    }

    pub fn remove(&mut self, policy_id: &str) -> Option<PolicyTemplate> {
        self.templates.remove(policy_id)
    }

    pub fn contains(&self, policy_id: &str) -> bool {
        self.templates.contains_key(policy_id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.templates.keys().cloned().collect()
    }

    pub fn templates(&self) -> impl Iterator<Item = &PolicyTemplate> {
        self.templates.values()
    }

    pub fn override_table(&self, jurisdiction: &str) -> Option<&OverrideTable> {
        self.overrides.get(jurisdiction)
    }

    /// True when a BLOCK rule of one of `policy_ids` names a category
    /// matching one of `categories`.
    pub fn blocks_any(&self, policy_ids: &[String], categories: &BTreeSet<String>) -> bool {
        policy_ids.iter().filter_map(|id| self.templates.get(id)).any(|t| {
            t.rules.iter().any(|r| {
                r.action == Decision::Block
                    && r
                        .predicate
                        .categories()
                        .iter()
                        .any(|m| categories.iter().any(|c| m.matches(c)))
            })
        })
    }

    /// Runs inference, decision and action for one request.
    pub fn evaluate(&self, input: EvaluationInput<'_>) -> Result<Verdict, EvaluationError> {
        let mut templates = Vec::with_capacity(input.policy_ids.len());
        for id in input.policy_ids {
            let t = self
                .templates
                .get(id)
                .ok_or_else(|| EvaluationError::UnknownPolicyId(id.clone()))?;
            if t.jurisdiction != input.jurisdiction
                && t.jurisdiction != crate::model::Jurisdiction::DEFAULT
            {
                return Err(EvaluationError::JurisdictionMismatch {
                    policy: id.clone(),
                    policy_jurisdiction: t.jurisdiction.clone(),
                    request: input.jurisdiction.to_string(),
                });
            }
            templates.push(t);
        }
        let assessment = infer(
            &input.findings,
            self.override_table(input.jurisdiction),
            &self.catalog,
        );
        let splitter = SentenceSplitter::default();
        let ctx = EvalContext::new(
            input.text,
            &input.findings,
            &assessment,
            input.direction,
            &splitter,
        );
        let mut firings: Vec<RuleFiring> = templates.iter().flat_map(|t| decide(t, &ctx)).collect();
        for detector in &input.fail_closed {
            firings.push(RuleFiring {
                policy_id: templates.first().map_or_else(String::new, |t| t.policy_id.clone()),
                rule_id: fail_closed_rule_id(detector),
                action: Decision::Block,
                matched: Vec::new(),
                message: Some(format!(
                    "detector `{detector}` did not complete and is configured to fail closed"
                )),
                masked_spans: Vec::new(),
            });
        }
        drop(ctx);
        Ok(act(
            input.text,
            firings,
            input.findings,
            &templates,
            input.timings,
            input.degraded,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::slice;

    fn find(text: &str, needle: &str) -> Span {
        let b = text.find(needle).unwrap();
        let s = text[..b].chars().count();
        Span::new(s, s + needle.chars().count())
    }

    fn pii(text: &str, needle: &str, tag: &str, level: Sensitivity) -> Finding {
        Finding::new("pii", format!("pii.{tag}"), tag, 0.9)
            .with_span(find(text, needle))
            .with_sensitivity(level)
    }

    fn input<'a>(text: &'a str, ids: &'a [String], findings: Vec<Finding>) -> EvaluationInput<'a> {
        EvaluationInput {
            text,
            direction: Direction::Prompt,
            jurisdiction: "default",
            policy_ids: ids,
            findings,
            timings: BTreeMap::new(),
            degraded: Vec::new(),
            fail_closed: Vec::new(),
        }
    }

    const NAMED_HATE: &str = r#"
policy_id = "p"
default_action = "PASS"
block_message = "blocked"

[[rules]]
id = "named-hate"
when = 'SAME_SENTENCE("pii.person_name", "hap")'
action = "BLOCK"

[[rules]]
id = "mask-pii"
when = 'category == "pii.*"'
action = "MASK"
mask_style = "MASK_TYPE"

[[rules]]
id = "warn-hap"
when = 'category == "hap"'
action = "WARN"
message = "careful"
"#;

    #[test]
    fn parse_round_trip_and_precedence() {
        let p = parse_predicate(
            r#"category == "pii.*" AND score >= 0.5 OR NOT sensitivity < HIGH AND direction == PROMPT"#,
        )
        .unwrap();
        assert_eq!(
            p.to_string(),
            r#"((category == "pii.*" AND score >= 0.5) OR (NOT sensitivity < HIGH AND direction == PROMPT))"#
        );
        let again = parse_predicate(&p.to_string()).unwrap();
        assert_eq!(again, p);
    }

    #[test]
    fn parse_errors() {
        for bad in [
            "",
            "category = \"x\"",
            "category == x",
            "score >= 2",
            "sensitivity >= EXTREME",
            "SAME_SENTENCE(\"a\")",
            "(score > 0.1",
            "score > 0.1 score",
            "colour == \"red\"",
            "NOT category == \"hap\"",
            "NOT SAME_SENTENCE(\"a\", \"b\")",
            "NOT (score > 0.5 OR direction == PROMPT)",
        ] {
            assert!(parse_predicate(bad).is_err(), "{bad:?} should not parse");
        }
        assert!(parse_predicate("NOT (score > 0.5 OR sensitivity >= HIGH)").is_ok());
    }

    #[test]
    fn load_policy_examples() {
        let mut set = PolicySet::new(CategoryCatalog::builtin());
        set.insert_toml(NAMED_HATE).unwrap();
        assert_eq!(set.get("p").unwrap().rules.len(), 3);

        let dup = "policy_id = \"d\"\ndefault_action = \"PASS\"\n\n[[rules]]\nid = \"a\"\nwhen = 'score > 0.1'\naction = \"WARN\"\n\n[[rules]]\nid = \"a\"\nwhen = 'score > 0.2'\naction = \"WARN\"\n";
        let err = set.insert_toml(dup).unwrap_err();
        assert_eq!(err.kind, PolicyErrorKind::DuplicateRuleId);
        assert_eq!(err.line, Some(10));

        let mask_cls = "policy_id = \"m\"\ndefault_action = \"PASS\"\n[[rules]]\nid = \"x\"\nwhen = 'category == \"hap\"'\naction = \"MASK\"\n";
        assert_eq!(
            set.insert_toml(mask_cls).unwrap_err().kind,
            PolicyErrorKind::MaskWithoutSpannedCategory
        );

        let bad_action = "policy_id = \"m\"\ndefault_action = \"PASS\"\n[[rules]]\nid = \"x\"\nwhen = 'score > 0.1'\naction = \"DELETE\"\n";
        let err = set.insert_toml(bad_action).unwrap_err();
        assert_eq!(err.kind, PolicyErrorKind::UnknownAction);
        assert_eq!(err.line, Some(6));

        let bad_pred = "policy_id = \"m\"\ndefault_action = \"PASS\"\n[[rules]]\nid = \"x\"\nwhen = 'score >> 0.1'\naction = \"WARN\"\n";
        let err = set.insert_toml(bad_pred).unwrap_err();
        assert_eq!(err.kind, PolicyErrorKind::MalformedPredicate);
        assert_eq!(err.line, Some(5));
        assert!(err.to_string().starts_with("MALFORMED_PREDICATE at line 5"));
    }

    #[test]
    fn builtin_policies_load() {
        let set = PolicySet::builtin();
        assert_eq!(set.ids(), vec!["default", "gdpr", "strict"]);
        assert!(set.override_table("gdpr").is_some());
        assert!(set.override_table("ccpa").is_some());
    }

    #[test]
    fn infer_examples() {
        let catalog = CategoryCatalog::builtin();
        let text = "mail jane@x.com";
        let email = pii(text, "jane@x.com", "email_address", Sensitivity::Moderate);
        let gdpr = OverrideTable::default().with_level("pii.email_address", Sensitivity::High);
        let a = infer(&[email.clone()], Some(&gdpr), &catalog);
        assert_eq!(a.levels[0].as_ref().unwrap().level, Sensitivity::High);

        let other = OverrideTable::default().with_level("pii.ssn", Sensitivity::High);
        let a = infer(&[email], Some(&other), &catalog);
        assert_eq!(a.levels[0].as_ref().unwrap().level, Sensitivity::Moderate);

        assert!(infer(&[], Some(&gdpr), &catalog).levels.is_empty());

        let hap = Finding::new("hap", "hap", "hap", 0.9).with_span(Span::new(0, 4));
        assert_eq!(infer(&[hap], Some(&gdpr), &catalog).levels, vec![None]);
    }

    #[test]
    fn named_hate_blocks_only_within_one_sentence() {
        let mut set = PolicySet::new(CategoryCatalog::builtin());
        set.insert_toml(NAMED_HATE).unwrap();
        let ids = vec!["p".to_string()];

        let text = "Alice Smith is a worthless idiot.";
        let findings = vec![
            pii(text, "Alice Smith", "person_name", Sensitivity::Low),
            Finding::new("hap", "hap", "hap", 0.9).with_span(find(text, text)),
        ];
        let v = set.evaluate(input(text, &ids, findings)).unwrap();
        assert_eq!(v.decision, Decision::Block);
        assert_eq!(v.output_text, "blocked");
        assert!(v.audit.iter().any(|f| f.rule_id == "named-hate"));
        // Evaluation is short-circuit free.
        assert!(v.audit.iter().any(|f| f.rule_id == "mask-pii"));
        assert!(v.audit.iter().any(|f| f.rule_id == "warn-hap"));

        let text = "Alice Smith wrote this. You idiot.";
        let findings = vec![
            pii(text, "Alice Smith", "person_name", Sensitivity::Low),
            Finding::new("hap", "hap", "hap", 0.9).with_span(find(text, "You idiot.")),
        ];
        let v = set.evaluate(input(text, &ids, findings)).unwrap();
        assert!(!v.audit.iter().any(|f| f.rule_id == "named-hate"));
        assert_eq!(v.decision, Decision::Mask);
        assert_eq!(v.output_text, "[PERSON_NAME] wrote this. You idiot.");
        assert_eq!(v.warnings, vec!["careful"]);
    }

    #[test]
    fn act_examples() {
        let mut set = PolicySet::new(CategoryCatalog::builtin());
        set.insert_toml(NAMED_HATE).unwrap();
        let ids = vec!["p".to_string()];
        let text = "mail jane@x.com now";
        let v = set
            .evaluate(input(
                text,
                &ids,
                vec![pii(text, "jane@x.com", "email_address", Sensitivity::Moderate)],
            ))
            .unwrap();
        assert_eq!(v.decision, Decision::Mask);
        assert_eq!(v.output_text, "mail [EMAIL_ADDRESS] now");
        let masking: Vec<_> = v.audit.iter().filter(|f| !f.masked_spans.is_empty()).collect();
        assert_eq!(masking.len(), 1);
        assert_eq!(masking[0].masked_spans, vec![find(text, "jane@x.com")]);

        let v = set.evaluate(input(text, &ids, vec![])).unwrap();
        assert_eq!(v.decision, Decision::Pass);
        assert_eq!(v.output_text, text);
        assert!(v.audit.is_empty());

        let text = "what a day";
        let v = set
            .evaluate(input(
                text,
                &ids,
                vec![Finding::new("kw", "hap", "hap", 0.4)],
            ))
            .unwrap();
        assert_eq!(v.decision, Decision::Warn);
        assert_eq!(v.output_text, text);
        assert_eq!(v.warnings, vec!["careful"]);
    }

    #[test]
    fn overlapping_mask_spans_merge_into_one_firing() {
        let mut set = PolicySet::new(CategoryCatalog::builtin());
        set.insert_toml(NAMED_HATE).unwrap();
        let ids = vec!["p".to_string()];
        let text = "id 123456789012 end";
        let a = Finding::new("pii", "pii.bank_account_number", "bank_account_number", 0.9)
            .with_span(find(text, "123456789012"))
            .with_sensitivity(Sensitivity::High);
        let b = Finding::new("pii", "pii.tax_id", "tax_id", 0.9)
            .with_span(find(text, "56789012 end"))
            .with_sensitivity(Sensitivity::High);
        let v = set.evaluate(input(text, &ids, vec![a, b])).unwrap();
        assert_eq!(v.output_text, "id [BANK_ACCOUNT_NUMBER]");
        let spans: Vec<Span> = v.audit.iter().flat_map(|f| f.masked_spans.clone()).collect();
        assert_eq!(spans.len(), 1);
        assert_eq!(slice(text, spans[0]).unwrap(), "123456789012 end");
    }

    #[test]
    fn fail_closed_blocks() {
        let set = PolicySet::builtin();
        let ids = vec!["default".to_string()];
        let mut inp = input("harmless", &ids, vec![]);
        inp.degraded = vec!["slow".into()];
        inp.fail_closed = vec!["slow".into()];
        let v = set.evaluate(inp).unwrap();
        assert_eq!(v.decision, Decision::Block);
        assert_eq!(v.degraded, vec!["slow"]);
        assert!(v.audit.iter().any(|f| f.rule_id == "fail-closed:slow"));
        assert!(!v.output_text.contains("harmless"));
    }

    #[test]
    fn default_action_is_a_floor() {
        let mut set = PolicySet::new(CategoryCatalog::builtin());
        set.insert_toml("policy_id = \"w\"\ndefault_action = \"WARN\"\n[[rules]]\nid = \"ok\"\nwhen = 'score < 0.2'\naction = \"PASS\"\n")
            .unwrap();
        let ids = vec!["w".to_string()];
        let v = set.evaluate(input("x", &ids, vec![])).unwrap();
        assert_eq!(v.decision, Decision::Warn);
        let v = set
            .evaluate(input("x", &ids, vec![Finding::new("k", "c", "c", 0.1)]))
            .unwrap();
        assert_eq!(v.decision, Decision::Warn);
    }

    #[test]
    fn jurisdiction_checks() {
        let set = PolicySet::builtin();
        let ids = vec!["gdpr".to_string()];
        let mut inp = input("x", &ids, vec![]);
        inp.jurisdiction = "ccpa";
        assert!(matches!(
            set.evaluate(inp),
            Err(EvaluationError::JurisdictionMismatch { .. })
        ));
        let ids = vec!["missing".to_string()];
        assert!(matches!(
            set.evaluate(input("x", &ids, vec![])),
            Err(EvaluationError::UnknownPolicyId(_))
        ));
    }

    #[test]
    fn gdpr_override_masks_names() {
        let set = PolicySet::builtin();
        let text = "Ask Alice Smith.";
        let ids = vec!["gdpr".to_string()];
        let mut inp = input(
            text,
            &ids,
            vec![pii(text, "Alice Smith", "person_name", Sensitivity::Low)],
        );
        inp.jurisdiction = "gdpr";
        let v = set.evaluate(inp).unwrap();
        assert_eq!(v.output_text, "Ask [PERSON_NAME].");

        let ids = vec!["default".to_string()];
        let v = set
            .evaluate(input(
                text,
                &ids,
                vec![pii(text, "Alice Smith", "person_name", Sensitivity::Low)],
            ))
            .unwrap();
        assert_eq!(v.decision, Decision::Pass);
    }
}
