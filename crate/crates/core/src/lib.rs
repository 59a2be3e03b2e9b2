//! Corpus construction, packing, curriculum scheduling, reward computation
//! and evaluation aggregation for translation-focused language models.
//!
//! Every model-backed step talks to an external service through
//! [`service::Backend`]; in-process stubs make the whole pipeline runnable
//! offline.

pub mod config;
pub mod curriculum;
pub mod eval;
pub mod io;
pub mod lang;
pub mod langid;
pub mod mono;
pub mod packing;
pub mod parallel;
pub mod reward;
pub mod service;
pub mod tokenizer;
pub mod types;

pub use lang::{registry_lookup, Lang, UnknownLanguage, LANGUAGE_COUNT};
pub use types::{Document, Provenance, QualityTier, RewardKind, RewardScore, SentencePair};
