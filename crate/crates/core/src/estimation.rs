//! Match-fraction estimation, scale fitting and confidence assignment.

use crate::metrics::{brier, ece, MetricsError, ScoredPrediction};
use crate::oracle::{Label, Oracle, OracleError};
use crate::prob_core::{CalibrationModel, Confidence, EmpiricalCdf, ProbError};
use crate::transforms::{apply_transform, Image, SampleSeed, TransformError, TransformSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

/// Scale grid searched by [`fit_a`].
pub const A_GRID: [f64; 9] = [0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0, 10.0, 100.0];

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Prob(#[from] ProbError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Outcome of `S` transformed queries on one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaEstimate {
    pub base_label: Label,
    pub matches: usize,
    pub samples_s: usize,
    pub p_a_raw: f64,
    pub p_a_clipped: f64,
}

impl PaEstimate {
    pub fn new(base_label: Label, matches: usize, samples_s: usize) -> Result<Self, EstimationError> {
        if samples_s == 0 {
            return Err(EstimationError::Config("S must be at least 1".into()));
        }
        if matches > samples_s {
            return Err(EstimationError::Config(format!("{matches} matches out of {samples_s} draws")));
        }
        let s = samples_s as f64;
        let p_a_raw = matches as f64 / s;
        let half = 0.5 / s;
        Ok(Self {
            base_label,
            matches,
            samples_s,
            p_a_raw,
            p_a_clipped: p_a_raw.clamp(half, 1.0 - half),
        })
    }
}

/// A sample to estimate: a stable id (seeds the draws) and its image.
#[derive(Debug, Clone, Copy)]
pub struct SampleRef<'a> {
    pub id: u64,
    pub image: &'a Image,
}

fn check_s(s: usize) -> Result<(), EstimationError> {
    if s == 0 {
        Err(EstimationError::Config("S must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Counts draws `0..s` whose label equals `base_label`.
pub fn estimate_pa_with_base(
    oracle: &dyn Oracle,
    img: &Image,
    base_label: Label,
    spec: &TransformSpec,
    s: usize,
    run_seed: u64,
    sample_index: u64,
) -> Result<PaEstimate, EstimationError> {
    check_s(s)?;
    spec.validate()?;
    let matches = (0..s as u64)
        .into_par_iter()
        .map(|draw| -> Result<usize, EstimationError> {
            let x = apply_transform(img, spec, SampleSeed::new(run_seed, sample_index, draw))?;
            Ok(usize::from(oracle.top1(&x)? == base_label))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    PaEstimate::new(base_label, matches, s)
}

/// One clean query fixes the label, then `s` transformed queries estimate
/// how often it survives.
pub fn estimate_pa(
    oracle: &dyn Oracle,
    img: &Image,
    spec: &TransformSpec,
    s: usize,
    run_seed: u64,
    sample_index: u64,
) -> Result<PaEstimate, EstimationError> {
    check_s(s)?;
    spec.validate()?;
    let base = oracle.top1(img)?;
    estimate_pa_with_base(oracle, img, base, spec, s, run_seed, sample_index)
}

/// Clean top-1 labels, one query per sample.
pub fn base_labels(oracle: &dyn Oracle, samples: &[SampleRef<'_>]) -> Result<Vec<Label>, EstimationError> {
    samples
        .par_iter()
        .map(|smp| oracle.top1(smp.image).map_err(EstimationError::from))
        .collect()
}

/// Estimates for samples whose clean labels are already known.
pub fn estimate_batch_with_base(
    oracle: &dyn Oracle,
    samples: &[SampleRef<'_>],
    bases: &[Label],
    spec: &TransformSpec,
    s: usize,
    run_seed: u64,
) -> Result<Vec<PaEstimate>, EstimationError> {
    if samples.len() != bases.len() {
        return Err(EstimationError::Config(format!(
            "{} samples but {} base labels",
            samples.len(),
            bases.len()
        )));
    }
    samples
        .par_iter()
        .zip(bases.par_iter())
        .map(|(smp, &base)| estimate_pa_with_base(oracle, smp.image, base, spec, s, run_seed, smp.id))
        .collect()
}

/// `samples.len() * (s + 1)` queries.
pub fn estimate_batch(
    oracle: &dyn Oracle,
    samples: &[SampleRef<'_>],
    spec: &TransformSpec,
    s: usize,
    run_seed: u64,
) -> Result<Vec<PaEstimate>, EstimationError> {
    check_s(s)?;
    spec.validate()?;
    let bases = base_labels(oracle, samples)?;
    estimate_batch_with_base(oracle, samples, &bases, spec, s, run_seed)
}

/// How `p_a` is mapped to a confidence during fitting.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Gaussian,
    Transfer(EmpiricalCdf),
}

impl ModelKind {
    pub fn build(&self, a: f64) -> Result<CalibrationModel, ProbError> {
        match self {
            Self::Gaussian => CalibrationModel::gaussian(a),
            Self::Transfer(cdf) => CalibrationModel::transfer(a, cdf.clone()),
        }
    }
}

/// Validation estimates produced under one transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub spec: TransformSpec,
    pub estimates: Vec<PaEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub a: f64,
    pub spec: TransformSpec,
    pub acc: f64,
    pub ece: f64,
    pub brier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub best_a: f64,
    pub best_spec: TransformSpec,
    /// Validation ECE of the selected pair.
    pub objective_value: f64,
    pub model: CalibrationModel,
    pub search_trace: Vec<TraceEntry>,
}

pub fn assign_confidences(estimates: &[PaEstimate], model: &CalibrationModel) -> Result<Vec<Confidence>, ProbError> {
    estimates.iter().map(|e| model.confidence(e.p_a_clipped)).collect()
}

pub fn score(
    estimates: &[PaEstimate],
    confidences: &[Confidence],
    truths: &[Label],
    num_classes: usize,
) -> Result<Vec<ScoredPrediction>, MetricsError> {
    if estimates.len() != truths.len() {
        return Err(MetricsError::LengthMismatch(estimates.len(), truths.len()));
    }
    if estimates.len() != confidences.len() {
        return Err(MetricsError::LengthMismatch(estimates.len(), confidences.len()));
    }
    estimates
        .iter()
        .zip(confidences)
        .zip(truths)
        .map(|((e, &c), &t)| ScoredPrediction::new(c, e.base_label, t, num_classes))
        .collect()
}

/// Grid search over every `(spec, a)` pair: lowest validation ECE wins,
/// lower Brier breaks exact ties, then earlier grid position.
pub fn fit_a(
    candidates: &[Candidate],
    truths: &[Label],
    num_classes: usize,
    kind: &ModelKind,
    a_grid: &[f64],
) -> Result<FitResult, EstimationError> {
    if candidates.is_empty() {
        return Err(EstimationError::Config("no transform candidates to fit".into()));
    }
    if a_grid.is_empty() {
        return Err(EstimationError::Config("empty scale grid".into()));
    }
    if truths.is_empty() {
        return Err(EstimationError::Config("empty validation set".into()));
    }
    for c in candidates {
        if c.estimates.len() != truths.len() {
            return Err(EstimationError::Config(format!(
                "{} estimates for {} validation labels under {}",
                c.estimates.len(),
                truths.len(),
                c.spec.label()
            )));
        }
    }
    let pairs: Vec<(usize, f64)> = (0..candidates.len())
        .flat_map(|ci| a_grid.iter().map(move |&a| (ci, a)))
        .collect();
    let trace: Vec<TraceEntry> = pairs
        .par_iter()
        .map(|&(ci, a)| -> Result<TraceEntry, EstimationError> {
            let cand = &candidates[ci];
            let model = kind.build(a)?;
            let conf = assign_confidences(&cand.estimates, &model)?;
            let preds = score(&cand.estimates, &conf, truths, num_classes)?;
            Ok(TraceEntry {
                a,
                spec: cand.spec,
                acc: crate::metrics::accuracy(&preds)?,
                ece: ece(&preds)?,
                brier: brier(&preds)?,
            })
        })
        .collect::<Result<_, _>>()?;
    let mut best = 0;
    for (i, t) in trace.iter().enumerate().skip(1) {
        let b = &trace[best];
        if t.ece < b.ece || (t.ece == b.ece && t.brier < b.brier) {
            best = i;
        }
    }
    let chosen = &trace[best];
    Ok(FitResult {
        best_a: chosen.a,
        best_spec: chosen.spec,
        objective_value: chosen.ece,
        model: kind.build(chosen.a)?,
        search_trace: trace,
    })
}

/// One CSV row of per-sample output. Match columns are empty in naive mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub sample_id: String,
    pub base_label: usize,
    pub matches: Option<usize>,
    #[serde(rename = "S")]
    pub s: usize,
    pub p_a_raw: Option<f64>,
    pub p_a_clipped: Option<f64>,
    pub confidence: f64,
}

impl EstimateRow {
    pub fn from_estimate(sample_id: impl Into<String>, e: &PaEstimate, confidence: Confidence) -> Self {
        Self {
            sample_id: sample_id.into(),
            base_label: e.base_label.0,
            matches: Some(e.matches),
            s: e.samples_s,
            p_a_raw: Some(e.p_a_raw),
            p_a_clipped: Some(e.p_a_clipped),
            confidence: confidence.value(),
        }
    }

    /// Single clean query, confidence 1.
    pub fn naive(sample_id: impl Into<String>, base_label: Label) -> Self {
        Self {
            sample_id: sample_id.into(),
            base_label: base_label.0,
            matches: None,
            s: 0,
            p_a_raw: None,
            p_a_clipped: None,
            confidence: 1.0,
        }
    }
}

pub fn write_estimates_csv<W: Write>(out: W, rows: &[EstimateRow]) -> Result<(), EstimationError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
