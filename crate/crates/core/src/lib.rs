//! Toolkit for building privacy-preserving synthetic note corpora and for
//! evaluating identifier-span predictions with document-level leakage as
//! the headline safety metric.
//!
//! The pipeline stages map onto the modules:
//!
//! - [`corpus`] — note/span domain types, JSONL persistence, validation
//! - [`templating`] — masking, placeholder templates, deterministic filling
//! - [`screening`] — identifier-like detection, normalization, dedup
//! - [`mixtures`] — seeded training-set composition plans
//! - [`metrics`] — span/token metrics, leakage, multi-seed aggregation
//! - [`diagnostics`] — corpus composition and distribution-shift reports
//! - [`tagger`] — gazetteer reference tagger for end-to-end runs

pub mod corpus;
pub mod diagnostics;
pub mod metrics;
pub mod mixtures;
pub mod placeholder;
pub mod rng;
pub mod rounding;
pub mod screening;
pub mod tagger;
pub mod templating;
pub mod text;
