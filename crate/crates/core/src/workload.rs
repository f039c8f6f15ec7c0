//! Synthetic datasets for the analytic models.
//!
//! Images are smooth random fields around mid-grey. Labels are drawn from
//! the model's own softmax, so the model is calibrated by construction and
//! its expected accuracy is the mean top-1 softmax probability. A logit scale
//! can be tuned to hit a target accuracy.

use crate::oracle::{Gain, Label, OracleError, RandomModelConfig, SyntheticModel};
use crate::transforms::{Image, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Sum of a few random low-frequency cosines per channel, centred on 0.5.
pub fn smooth_image(shape: Shape, rng: &mut impl Rng) -> Image {
    const WAVES: usize = 4;
    const AMPLITUDE: f64 = 0.15;
    let mut data = vec![0.0f64; shape.len()];
    for ch in 0..shape.channels {
        for _ in 0..WAVES {
            let amp = AMPLITUDE * rng.sample::<f64, _>(StandardNormal) / (WAVES as f64).sqrt();
            let fx = rng.random_range(0.0..2.0);
            let fy = rng.random_range(0.0..2.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            for r in 0..shape.height {
                for c in 0..shape.width {
                    let t = 2.0 * PI * (fx * c as f64 / shape.width as f64 + fy * r as f64 / shape.height as f64);
                    data[(r * shape.width + c) * shape.channels + ch] += amp * (t + phase).cos();
                }
            }
        }
    }
    Image::from_clamped(shape, data.into_iter().map(|v| 0.5 + v).collect())
}

/// Flat image plus independent uniform pixel offsets in `[-half_width, half_width]`.
pub fn jittered_image(shape: Shape, half_width: f64, rng: &mut impl Rng) -> Image {
    let data = (0..shape.len())
        .map(|_| 0.5 + rng.random_range(-half_width..=half_width))
        .collect();
    Image::from_clamped(shape, data)
}

/// Mean top-1 softmax probability over `images`.
pub fn expected_accuracy(model: &SyntheticModel, images: &[Image]) -> Result<f64, OracleError> {
    let mut total = 0.0;
    for img in images {
        total += model.softmax(img)?.into_iter().fold(0.0, f64::max);
    }
    Ok(total / images.len() as f64)
}

/// Logit multiplier whose expected accuracy on `images` is `target`, found by
/// bisection in log space.
pub fn tune_logit_scale(model: &SyntheticModel, images: &[Image], target: f64) -> Result<f64, OracleError> {
    let k = model.class_count() as f64;
    if !(target > 1.0 / k && target < 1.0) {
        return Err(OracleError::Config(format!("target accuracy {target} outside (1/K, 1)")));
    }
    let (mut lo, mut hi) = (-12.0f64, 12.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if expected_accuracy(&model.with_logit_scale(mid.exp()), images)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// One label per image, drawn from the model's softmax.
pub fn sample_labels(model: &SyntheticModel, images: &[Image], seed: u64) -> Result<Vec<Label>, OracleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    images
        .iter()
        .map(|img| {
            let p = model.softmax(img)?;
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (k, pk) in p.iter().enumerate() {
                acc += pk;
                if u < acc {
                    return Ok(Label(k));
                }
            }
            Ok(Label(p.len() - 1))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub shape: Shape,
    pub latent_dim: usize,
    pub num_classes: usize,
    pub gain: Gain,
    pub samples: usize,
    /// Tune the logit scale so the expected accuracy hits this value.
    pub target_accuracy: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Workload {
    pub model: SyntheticModel,
    pub images: Vec<Image>,
    pub labels: Vec<Label>,
}

impl Workload {
    pub fn generate(cfg: &WorkloadConfig) -> Result<Self, OracleError> {
        let model = SyntheticModel::random(&RandomModelConfig {
            input_shape: cfg.shape,
            latent_dim: cfg.latent_dim,
            num_classes: cfg.num_classes,
            gain: cfg.gain,
            seed: cfg.seed,
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1111_2222_3333_4444);
        let images: Vec<Image> = (0..cfg.samples).map(|_| smooth_image(cfg.shape, &mut rng)).collect();
        let model = match cfg.target_accuracy {
            Some(t) => {
                let scale = tune_logit_scale(&model, &images, t)?;
                model.with_logit_scale(scale)
            }
            None => model,
        };
        let labels = sample_labels(&model, &images, cfg.seed ^ 0x5555_6666_7777_8888)?;
        Ok(Self { model, images, labels })
    }
}
