//! Guardrail gateway for LLM prompts and responses.
//!
//! Independent detectors (PII extraction, keyword classification, corpus
//! attribution, or remote services) run in parallel over a payload; the
//! policy manager then turns the pooled findings into a [`Verdict`] that
//! passes, warns about, masks, or blocks the text.

pub mod attribution;
pub mod cli;
pub mod config;
pub mod detector;
pub mod gateway;
pub mod keywords;
pub mod model;
pub mod pii;
pub mod policy;
pub mod server;
pub mod store;
pub mod text;

pub use model::{
    Decision, Direction, ExtractionPair, Finding, PiiType, RuleFiring, Sensitivity, ShieldRequest,
    Span, Verdict,
};
