//! Tooling for automated medical coding experiments: corpus preparation,
//! patient-grouped stratified splits, multi-label evaluation with explicit
//! macro-F1 policies, decision-boundary tuning, small label-wise attention
//! models trained from scratch, and error analysis.

pub mod analysis;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod models;
pub mod splitter;
pub mod tuner;

pub use error::{Error, Result};
