//! Latent-noise diagnostics for white-box models.
//!
//! For each sample the margin between its top-1 and runner-up classes is
//! recorded under many transform draws. The spread of the per-sample
//! cumulatives (`Var`) measures how far the noise is from being shared across
//! inputs, and the distance of their mean from the best `Phi(x / a)` (`KS`)
//! measures how far it is from Gaussian.

use crate::metrics::pairwise_sum;
use crate::oracle::{Label, Oracle, OracleError};
use crate::prob_core::{std_normal_cdf, EmpiricalCdf, ProbError};
use crate::estimation::SampleRef;
use crate::transforms::{apply_transform, SampleSeed, TransformError, TransformSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

pub const ENSEMBLE_GRID_POINTS: usize = 512;
pub const MIN_TRANSFER_DRAWS: usize = 100;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Prob(#[from] ProbError),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("need at least {needed} pooled draws, got {got}")]
    TooFewDraws { needed: usize, got: usize },
    #[error("scale grid must be non-empty and positive")]
    BadGrid,
    #[error("latent draw for sample {0} is not finite")]
    NonFinite(u64),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentNoiseSample {
    pub sample_id: u64,
    pub class_a: Label,
    pub class_b: Label,
    /// `margin(T(x)) - margin(x)` per draw.
    pub draws: Vec<f64>,
}

/// Margin shifts of each sample under `draws_per_sample` seeded transforms,
/// projected on its clean top-1 vs runner-up direction.
pub fn collect_latent_noise(
    oracle: &dyn Oracle,
    samples: &[SampleRef<'_>],
    spec: &TransformSpec,
    draws_per_sample: usize,
    run_seed: u64,
) -> Result<Vec<LatentNoiseSample>, DiagnosticsError> {
    let wb = oracle.white_box().ok_or(OracleError::NotWhiteBox)?;
    spec.validate()?;
    samples
        .par_iter()
        .map(|smp| {
            let (a, b) = wb.ranked_pair(smp.image)?;
            let clean = wb.latent_margin(smp.image, a, b)?;
            let draws = (0..draws_per_sample as u64)
                .map(|d| {
                    let x = apply_transform(smp.image, spec, SampleSeed::new(run_seed, smp.id, d))?;
                    let v = wb.latent_margin(&x, a, b)? - clean;
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(DiagnosticsError::NonFinite(smp.id))
                    }
                })
                .collect::<Result<Vec<f64>, DiagnosticsError>>()?;
            Ok(LatentNoiseSample {
                sample_id: smp.id,
                class_a: a,
                class_b: b,
                draws,
            })
        })
        .collect()
}

/// Per-sample step cumulatives on a shared grid, with their mean and a
/// 2.5 % / 97.5 % envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfEnsemble {
    pub grid: Vec<f64>,
    /// `cdfs[s][g]` is sample `s` evaluated at `grid[g]`.
    pub cdfs: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub q025: Vec<f64>,
    pub q975: Vec<f64>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    g[n - 1] = hi;
    g
}

/// Type-7 (linear between order statistics) quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn step_cdf_on_grid(draws: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut k = 0;
    grid.iter()
        .map(|&x| {
            while k < sorted.len() && sorted[k] <= x {
                k += 1;
            }
            k as f64 / n
        })
        .collect()
}

impl CdfEnsemble {
    pub fn build(samples: &[LatentNoiseSample]) -> Result<Self, DiagnosticsError> {
        if samples.is_empty() {
            return Err(DiagnosticsError::TooFewSamples { needed: 1, got: 0 });
        }
        if let Some(s) = samples.iter().find(|s| s.draws.is_empty()) {
            log::error!("sample {} has no draws", s.sample_id);
            return Err(DiagnosticsError::TooFewDraws { needed: 1, got: 0 });
        }
        let lo = samples.iter().flat_map(|s| &s.draws).copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().flat_map(|s| &s.draws).copied().fold(f64::NEG_INFINITY, f64::max);
        let grid = linspace(lo, hi, ENSEMBLE_GRID_POINTS);
        let cdfs: Vec<Vec<f64>> = samples.iter().map(|s| step_cdf_on_grid(&s.draws, &grid)).collect();
        let mut mean = Vec::with_capacity(grid.len());
        let mut q025 = Vec::with_capacity(grid.len());
        let mut q975 = Vec::with_capacity(grid.len());
        let mut column = vec![0.0; cdfs.len()];
        for g in 0..grid.len() {
            for (c, cdf) in column.iter_mut().zip(&cdfs) {
                *c = cdf[g];
            }
            mean.push(pairwise_sum(&column) / column.len() as f64);
            column.sort_by(f64::total_cmp);
            q025.push(quantile_sorted(&column, 0.025));
            q975.push(quantile_sorted(&column, 0.975));
        }
        Ok(Self {
            grid,
            cdfs,
            mean,
            q025,
            q975,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.cdfs.len()
    }

    /// `grid,mean,q2_5,q97_5,fit` rows, `fit` being `Phi(x / a)`.
    pub fn write_csv<W: Write>(&self, mut out: W, a: f64) -> Result<(), DiagnosticsError> {
        writeln!(out, "grid,mean,q2_5,q97_5,fit")?;
        for g in 0..self.grid.len() {
            writeln!(
                out,
                "{},{},{},{},{}",
                self.grid[g],
                self.mean[g],
                self.q025[g],
                self.q975[g],
                std_normal_cdf(self.grid[g] / a)
            )?;
        }
        Ok(())
    }
}

/// Largest envelope width `max_x (q97.5(x) - q2.5(x))`.
pub fn var_statistic(ensemble: &CdfEnsemble) -> Result<f64, DiagnosticsError> {
    if ensemble.num_samples() < 2 {
        return Err(DiagnosticsError::TooFewSamples {
            needed: 2,
            got: ensemble.num_samples(),
        });
    }
    Ok(ensemble
        .q975
        .iter()
        .zip(&ensemble.q025)
        .map(|(hi, lo)| hi - lo)
        .fold(0.0, f64::max))
}

/// `min_a max_x |F_mean(x) - Phi(x / a)|` and its argmin; ties go to the
/// smaller `a`.
pub fn ks_statistic(ensemble: &CdfEnsemble, a_grid: &[f64]) -> Result<(f64, f64), DiagnosticsError> {
    if a_grid.is_empty() || a_grid.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(DiagnosticsError::BadGrid);
    }
    let mut best: Option<(f64, f64)> = None;
    for &a in a_grid {
        let d = ensemble
            .grid
            .iter()
            .zip(&ensemble.mean)
            .map(|(&x, &f)| (f - std_normal_cdf(x / a)).abs())
            .fold(0.0, f64::max);
        best = match best {
            Some((bd, ba)) if bd < d || (bd == d && ba <= a) => Some((bd, ba)),
            _ => Some((d, a)),
        };
    }
    Ok(best.expect("grid is non-empty"))
}

/// 50 log-spaced scales in `[0.001, 100]`.
pub fn default_ks_grid() -> Vec<f64> {
    let n = 50;
    (0..n)
        .map(|i| 10f64.powf(-3.0 + 5.0 * i as f64 / (n - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticStats {
    pub var_stat: f64,
    pub ks_stat: f64,
    pub best_fit_a: f64,
}

pub fn diagnose(samples: &[LatentNoiseSample], a_grid: &[f64]) -> Result<(DiagnosticStats, CdfEnsemble), DiagnosticsError> {
    let ens = CdfEnsemble::build(samples)?;
    let var_stat = var_statistic(&ens)?;
    let (ks_stat, best_fit_a) = ks_statistic(&ens, a_grid)?;
    Ok((
        DiagnosticStats {
            var_stat,
            ks_stat,
            best_fit_a,
        },
        ens,
    ))
}

/// Pools every draw, centres the pool at zero and returns its cumulative.
pub fn learn_transfer_cdf(samples: &[LatentNoiseSample]) -> Result<EmpiricalCdf, DiagnosticsError> {
    let pooled: Vec<f64> = samples.iter().flat_map(|s| s.draws.iter().copied()).collect();
    if pooled.len() < MIN_TRANSFER_DRAWS {
        return Err(DiagnosticsError::TooFewDraws {
            needed: MIN_TRANSFER_DRAWS,
            got: pooled.len(),
        });
    }
    let mean = pairwise_sum(&pooled) / pooled.len() as f64;
    Ok(EmpiricalCdf::from_samples(pooled.into_iter().map(|x| x - mean).collect())?)
}
