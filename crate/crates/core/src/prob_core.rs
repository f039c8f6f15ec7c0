//! Numerical kernel: standard normal CDF and quantile, the probit-sigmoid
//! confidence maps, empirical CDFs and the residual-mass spreading rule.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::f64::consts::SQRT_2;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbError {
    #[error("probability {0} outside the open interval (0, 1)")]
    OpenUnitInterval(f64),
    #[error("probability {0} outside [0, 1]")]
    ClosedUnitInterval(f64),
    #[error("scale parameter must be finite and non-negative, got {0}")]
    Scale(f64),
    #[error("calibration scale `a` must be finite and positive, got {0}")]
    NonPositiveScale(f64),
    #[error("empirical cdf needs at least 2 finite samples, got {0}")]
    TooFewSamples(usize),
    #[error("empirical cdf sample is not finite: {0}")]
    NonFinite(f64),
    #[error("empirical cdf points are not sorted ascending at index {0}")]
    Unsorted(usize),
    #[error("empirical cdf declares n = {declared} but holds {actual} points")]
    CountMismatch { declared: usize, actual: usize },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
}

/// A probability assigned to the top-1 prediction.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Confidence(f64);

impl Confidence {
    pub fn new(value: f64) -> Result<Self, ProbError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(ProbError::ClosedUnitInterval(value))
        }
    }

    /// Full confidence, the single-query baseline.
    pub const ONE: Confidence = Confidence(1.0);

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

// Acklam's rational approximation, relative error ~1.15e-9 before polishing.
const INV_A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383_577_518_672_69e2,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const INV_B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const INV_C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const INV_D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];
const INV_P_LOW: f64 = 0.02425;

/// Standard normal quantile on the open unit interval.
pub fn std_normal_inv_cdf(p: f64) -> Result<f64, ProbError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(ProbError::OpenUnitInterval(p));
    }
    let x = if p < INV_P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((INV_C[0] * q + INV_C[1]) * q + INV_C[2]) * q + INV_C[3]) * q + INV_C[4]) * q
            + INV_C[5])
            / ((((INV_D[0] * q + INV_D[1]) * q + INV_D[2]) * q + INV_D[3]) * q + 1.0)
    } else if p <= 1.0 - INV_P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((INV_A[0] * r + INV_A[1]) * r + INV_A[2]) * r + INV_A[3]) * r + INV_A[4]) * r
            + INV_A[5])
            * q
            / (((((INV_B[0] * r + INV_B[1]) * r + INV_B[2]) * r + INV_B[3]) * r + INV_B[4]) * r
                + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((INV_C[0] * q + INV_C[1]) * q + INV_C[2]) * q + INV_C[3]) * q + INV_C[4]) * q
            + INV_C[5])
            / ((((INV_D[0] * q + INV_D[1]) * q + INV_D[2]) * q + INV_D[3]) * q + 1.0)
    };
    // One Halley step against the accurate forward CDF. The residual is taken
    // on the smaller tail so that p close to 1 keeps its precision.
    let e = if x > 0.0 {
        (1.0 - p) - std_normal_cdf(-x)
    } else {
        std_normal_cdf(x) - p
    };
    let u = e / std_normal_pdf(x);
    Ok(x - u / (1.0 + 0.5 * x * u))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_scale(a: f64) -> Result<(), ProbError> {
    if a.is_finite() && a >= 0.0 {
        Ok(())
    } else {
        Err(ProbError::Scale(a))
    }
}

/// Probit-sigmoid confidence `1 / (1 + exp(-a * Φ⁻¹(p_a)))`.
pub fn gaussian_confidence(p_a: f64, a: f64) -> Result<Confidence, ProbError> {
    check_scale(a)?;
    let z = std_normal_inv_cdf(p_a)?;
    Ok(Confidence(sigmoid(a * z)))
}

/// Confidence under a learned latent-noise distribution:
/// `1 / (1 + exp(a * F⁻¹(1 - p_a)))`.
pub fn transfer_confidence(p_a: f64, a: f64, cdf: &EmpiricalCdf) -> Result<Confidence, ProbError> {
    check_scale(a)?;
    if !(p_a > 0.0 && p_a < 1.0) {
        return Err(ProbError::OpenUnitInterval(p_a));
    }
    let q = ecdf_inverse(cdf, 1.0 - p_a)?;
    Ok(Confidence(sigmoid(-a * q)))
}

/// Sorted sample of a real-valued distribution. Duplicated values are kept,
/// so every sample carries mass `1/n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalCdf {
    n: usize,
    points: Vec<f64>,
}

#[derive(Deserialize)]
struct RawEmpiricalCdf {
    n: usize,
    points: Vec<f64>,
}

impl<'de> Deserialize<'de> for EmpiricalCdf {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let raw = RawEmpiricalCdf::deserialize(de)?;
        if raw.n != raw.points.len() {
            return Err(serde::de::Error::custom(ProbError::CountMismatch {
                declared: raw.n,
                actual: raw.points.len(),
            }));
        }
        EmpiricalCdf::from_sorted(raw.points).map_err(serde::de::Error::custom)
    }
}

impl EmpiricalCdf {
    pub fn from_samples(mut samples: Vec<f64>) -> Result<Self, ProbError> {
        if let Some(&bad) = samples.iter().find(|v| !v.is_finite()) {
            return Err(ProbError::NonFinite(bad));
        }
        samples.sort_by(f64::total_cmp);
        Self::from_sorted(samples)
    }

    fn from_sorted(points: Vec<f64>) -> Result<Self, ProbError> {
        if points.len() < 2 {
            return Err(ProbError::TooFewSamples(points.len()));
        }
        if let Some(&bad) = points.iter().find(|v| !v.is_finite()) {
            return Err(ProbError::NonFinite(bad));
        }
        if let Some(i) = points.windows(2).position(|w| w[1] < w[0]) {
            return Err(ProbError::Unsorted(i + 1));
        }
        Ok(Self {
            n: points.len(),
            points,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Right-continuous step CDF `#{x_i <= x} / n`.
    pub fn eval(&self, x: f64) -> f64 {
        self.points.partition_point(|&p| p <= x) as f64 / self.n as f64
    }
}

/// Quantile of an empirical CDF.
///
/// The i-th order statistic (0-based) sits at plotting position
/// `(i + 0.5) / n`; values between positions are linearly interpolated and
/// queries beyond the outer positions return the sample minimum or maximum.
pub fn ecdf_inverse(cdf: &EmpiricalCdf, q: f64) -> Result<f64, ProbError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(ProbError::ClosedUnitInterval(q));
    }
    let n = cdf.n;
    let pts = &cdf.points;
    let t = q * n as f64 - 0.5;
    if t <= 0.0 {
        return Ok(pts[0]);
    }
    if t >= (n - 1) as f64 {
        return Ok(pts[n - 1]);
    }
    // Plotting positions land on an order statistic up to rounding.
    let nearest = t.round();
    if (t - nearest).abs() <= 1e-9 * (n as f64).max(1.0) {
        return Ok(pts[nearest as usize]);
    }
    let k = t.floor() as usize;
    let frac = t - k as f64;
    Ok(pts[k] + frac * (pts[k + 1] - pts[k]))
}

/// Probability vector with the predicted class in slot 0 and the remaining
/// mass spread evenly over the other `num_classes - 1` slots.
pub fn spread_residual(conf: Confidence, num_classes: usize) -> Result<Vec<f64>, ProbError> {
    if num_classes < 2 {
        return Err(ProbError::TooFewClasses(num_classes));
    }
    let rest = (1.0 - conf.0) / (num_classes - 1) as f64;
    let mut out = vec![rest; num_classes];
    out[0] = conf.0;
    Ok(out)
}

/// A fitted map from the match fraction `p_a` to a confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CalibrationModel {
    Gaussian { a: f64 },
    Transfer { a: f64, cdf: EmpiricalCdf },
}

impl CalibrationModel {
    pub fn gaussian(a: f64) -> Result<Self, ProbError> {
        positive(a)?;
        Ok(Self::Gaussian { a })
    }

    pub fn transfer(a: f64, cdf: EmpiricalCdf) -> Result<Self, ProbError> {
        positive(a)?;
        Ok(Self::Transfer { a, cdf })
    }

    pub fn a(&self) -> f64 {
        match self {
            Self::Gaussian { a } | Self::Transfer { a, .. } => *a,
        }
    }

    pub fn confidence(&self, p_a: f64) -> Result<Confidence, ProbError> {
        match self {
            Self::Gaussian { a } => gaussian_confidence(p_a, *a),
            Self::Transfer { a, cdf } => transfer_confidence(p_a, *a, cdf),
        }
    }
}

fn positive(a: f64) -> Result<(), ProbError> {
    if a.is_finite() && a > 0.0 {
        Ok(())
    } else {
        Err(ProbError::NonPositiveScale(a))
    }
}
