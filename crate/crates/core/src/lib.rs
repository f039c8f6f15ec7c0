//! Calibrated confidence for classifiers that only expose their top-1 label.
//!
//! A sample is queried once as-is and `S` more times under random transforms;
//! the fraction of draws agreeing with the clean label is mapped to a
//! confidence through a probit link whose scale is fitted on a validation split.

pub mod cli;
pub mod diagnostics;
pub mod estimation;
pub mod metrics;
pub mod oracle;
pub mod prob_core;
pub mod transforms;
pub mod workload;
