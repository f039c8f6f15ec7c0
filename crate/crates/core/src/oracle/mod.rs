//! Sources of top-1 predictions.
//!
//! [`Oracle`] is the black-box surface: an image goes in, one label comes out.
//! The synthetic model additionally implements [`WhiteBox`], which exposes the
//! latent margins needed by the diagnostics.

mod cache;
mod http;
mod playback;
mod synthetic;

pub use cache::{LogEntry, QueryCache};
pub use http::{HttpOracle, HttpOracleConfig, PredictRequest, PredictResponse};
pub use playback::PlaybackOracle;
pub use synthetic::{Gain, RandomModelConfig, SyntheticModel};

use crate::transforms::{Image, Shape};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Index of a class in `[0, num_classes)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub usize);

impl Label {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("image shape {actual} does not match oracle input shape {expected}")]
    ShapeMismatch { expected: Shape, actual: Shape },
    #[error("query failed after {attempts} attempts: {message}")]
    RetriesExhausted { attempts: u32, message: String },
    #[error("malformed oracle response: {0}")]
    Protocol(String),
    #[error("oracle returned label {label} outside [0, {num_classes})")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("no recorded prediction for query {hash}")]
    MissingPrediction { hash: String },
    #[error("operation needs white-box access, which this oracle does not provide")]
    NotWhiteBox,
    #[error("invalid oracle configuration: {0}")]
    Config(String),
    #[error("class pair must be two distinct labels, got {0} twice")]
    SameClass(Label),
    #[error("cache i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl OracleError {
    /// Errors caused by how the oracle was set up rather than by a query.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Self::ShapeMismatch { .. } | Self::Config(_) | Self::NotWhiteBox | Self::SameClass(_)
        )
    }
}

/// A classifier that reveals only its most probable class.
pub trait Oracle: Send + Sync {
    fn top1(&self, img: &Image) -> Result<Label, OracleError>;

    fn input_shape(&self) -> Option<Shape> {
        None
    }

    fn num_classes(&self) -> Option<usize> {
        None
    }

    fn white_box(&self) -> Option<&dyn WhiteBox> {
        None
    }
}

/// Latent access on models we can open up.
pub trait WhiteBox: Send + Sync {
    /// `(w_a - w_b)^T h(x) + (b_a - b_b)`.
    fn latent_margin(&self, img: &Image, class_a: Label, class_b: Label) -> Result<f64, OracleError>;

    /// Top-1 and runner-up classes on `img`.
    fn ranked_pair(&self, img: &Image) -> Result<(Label, Label), OracleError>;

    /// Softmax probability of the top-1 class.
    fn true_confidence(&self, img: &Image) -> Result<f64, OracleError>;
}

pub(crate) fn check_shape(expected: Option<Shape>, img: &Image) -> Result<(), OracleError> {
    match expected {
        Some(expected) if expected != img.shape() => Err(OracleError::ShapeMismatch {
            expected,
            actual: img.shape(),
        }),
        _ => Ok(()),
    }
}
