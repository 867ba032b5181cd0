//! Two-step triage pipeline for differentiating tuberculosis from pneumonia.
//!
//! Step 1 diagnoses from 18 low-cost features with a two-layer stacked
//! ensemble and attaches a confidence score; low-confidence patients are
//! routed to step 2, an ensemble over laboratory values, chest X-ray report
//! keywords and the step-1 meta-features.

pub mod domain;
pub mod error;
pub mod evaluation;
pub mod learners;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod stacking;
pub mod storage;
pub mod synthgen;

pub use error::{Result, TpisError};
