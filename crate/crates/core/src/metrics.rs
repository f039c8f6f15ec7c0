//! Calibration metrics over top-1 predictions.
//!
//! ECE uses 15 equal-width bins; bin `b` covers `(b/15, (b+1)/15]` and the
//! first bin also holds confidence 0. Brier scores the full probability
//! vector produced by [`spread_residual`]. Sums use pairwise reduction so the
//! result does not depend on how samples were batched.

use crate::oracle::Label;
use crate::prob_core::{spread_residual, Confidence};
use crate::transforms::TransformSpec;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

pub const ECE_BINS: usize = 15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("metric needs at least one prediction")]
    Empty,
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("pearson correlation needs at least 3 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("invalid prediction: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPrediction {
    pub confidence: Confidence,
    pub predicted: Label,
    pub truth: Label,
    pub num_classes: usize,
}

impl ScoredPrediction {
    pub fn new(confidence: Confidence, predicted: Label, truth: Label, num_classes: usize) -> Result<Self, MetricsError> {
        if num_classes < 2 || predicted.0 >= num_classes || truth.0 >= num_classes {
            return Err(MetricsError::Invalid(format!(
                "labels {predicted}/{truth} with {num_classes} classes"
            )));
        }
        Ok(Self {
            confidence,
            predicted,
            truth,
            num_classes,
        })
    }

    pub fn is_correct(&self) -> bool {
        self.predicted == self.truth
    }
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn non_empty(preds: &[ScoredPrediction]) -> Result<(), MetricsError> {
    if preds.is_empty() {
        Err(MetricsError::Empty)
    } else {
        Ok(())
    }
}

pub fn accuracy(preds: &[ScoredPrediction]) -> Result<f64, MetricsError> {
    non_empty(preds)?;
    let correct = preds.iter().filter(|p| p.is_correct()).count();
    Ok(correct as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Mean confidence per bin; 0 for empty bins.
    pub mean_confidence: Vec<f64>,
    /// Fraction correct per bin; 0 for empty bins.
    pub accuracy: Vec<f64>,
}

impl ReliabilityBins {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// `bin_center,count,mean_conf,acc` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_center,count,mean_conf,acc\n");
        for b in 0..self.counts.len() {
            let center = 0.5 * (self.bin_edges[b] + self.bin_edges[b + 1]);
            out.push_str(&format!(
                "{center},{},{},{}\n",
                self.counts[b], self.mean_confidence[b], self.accuracy[b]
            ));
        }
        out
    }
}

fn bin_edges() -> Vec<f64> {
    (0..=ECE_BINS).map(|b| b as f64 / ECE_BINS as f64).collect()
}

fn bin_of(edges: &[f64], c: f64) -> usize {
    // number of edges strictly below c, minus one, is the bin with c in (lo, hi]
    edges.partition_point(|&e| e < c).saturating_sub(1).min(ECE_BINS - 1)
}

pub fn reliability_bins(preds: &[ScoredPrediction]) -> Result<ReliabilityBins, MetricsError> {
    non_empty(preds)?;
    let edges = bin_edges();
    let mut conf: Vec<Vec<f64>> = vec![Vec::new(); ECE_BINS];
    let mut hits: Vec<Vec<f64>> = vec![Vec::new(); ECE_BINS];
    for p in preds {
        let c = p.confidence.value();
        let b = bin_of(&edges, c);
        conf[b].push(c);
        hits[b].push(if p.is_correct() { 1.0 } else { 0.0 });
    }
    let counts: Vec<usize> = conf.iter().map(Vec::len).collect();
    let mean = |v: &Vec<f64>| if v.is_empty() { 0.0 } else { pairwise_sum(v) / v.len() as f64 };
    Ok(ReliabilityBins {
        bin_edges: edges,
        counts,
        mean_confidence: conf.iter().map(mean).collect(),
        accuracy: hits.iter().map(mean).collect(),
    })
}

/// Expected calibration error `sum_b (n_b / N) |acc_b - conf_b|`.
pub fn ece(preds: &[ScoredPrediction]) -> Result<f64, MetricsError> {
    let bins = reliability_bins(preds)?;
    let n = preds.len() as f64;
    let terms: Vec<f64> = (0..ECE_BINS)
        .filter(|&b| bins.counts[b] > 0)
        .map(|b| (bins.counts[b] as f64 / n) * (bins.accuracy[b] - bins.mean_confidence[b]).abs())
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Mean squared distance between the spread probability vector and one-hot truth.
pub fn brier(preds: &[ScoredPrediction]) -> Result<f64, MetricsError> {
    non_empty(preds)?;
    let mut per_sample = Vec::with_capacity(preds.len());
    for p in preds {
        let probs = spread_residual(p.confidence, p.num_classes)
            .map_err(|e| MetricsError::Invalid(e.to_string()))?;
        // slot 0 is the predicted class; any other slot stands for the truth
        // when the prediction is wrong, the residual mass being uniform
        let truth_slot = if p.is_correct() { 0 } else { 1 };
        let terms: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(k, &q)| {
                let y = if k == truth_slot { 1.0 } else { 0.0 };
                (q - y) * (q - y)
            })
            .collect();
        per_sample.push(pairwise_sum(&terms));
    }
    Ok(pairwise_sum(&per_sample) / preds.len() as f64)
}

/// Mann-Whitney AUROC of confidence as a detector of correct predictions.
/// Ties count one half. Errors when only one outcome is present.
pub fn auroc(preds: &[ScoredPrediction]) -> Result<f64, MetricsError> {
    non_empty(preds)?;
    let n_pos = preds.iter().filter(|p| p.is_correct()).count();
    let n_neg = preds.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::Undefined(format!(
            "AUROC needs correct and incorrect predictions ({n_pos} correct, {n_neg} incorrect)"
        )));
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[a].confidence.value().total_cmp(&preds[b].confidence.value()));
    // sum of mid-ranks (1-based) of positives, in half units to stay integral
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let v = preds[order[i]].confidence.value();
        let mut j = i;
        while j < order.len() && preds[order[j]].confidence.value() == v {
            j += 1;
        }
        let mid_x2 = (i + 1 + j) as u128; // 2 * mean of ranks i+1..=j
        let pos_in_tie = order[i..j].iter().filter(|&&k| preds[k].is_correct()).count() as u128;
        rank_sum_x2 += mid_x2 * pos_in_tie;
        i = j;
    }
    if preds.iter().all(|p| p.confidence == preds[0].confidence) {
        log::warn!("all confidences tie; AUROC is 0.5 by convention");
    }
    let np = n_pos as u128;
    let u_x2 = rank_sum_x2 - np * (np + 1);
    Ok(u_x2 as f64 / 2.0 / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Sample Pearson correlation with a two-sided t-test p-value (`n - 2` dof).
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Result<Correlation, MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 3 {
        return Err(MetricsError::TooFewPairs(n));
    }
    let mx = pairwise_sum(xs) / n as f64;
    let my = pairwise_sum(ys) / n as f64;
    let dx: Vec<f64> = xs.iter().map(|x| x - mx).collect();
    let dy: Vec<f64> = ys.iter().map(|y| y - my).collect();
    let sxy = pairwise_sum(&dx.iter().zip(&dy).map(|(a, b)| a * b).collect::<Vec<_>>());
    let sxx = pairwise_sum(&dx.iter().map(|a| a * a).collect::<Vec<_>>());
    let syy = pairwise_sum(&dy.iter().map(|b| b * b).collect::<Vec<_>>());
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::Undefined("zero variance input to pearson_r".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let dof = (n - 2) as f64;
    let p_value = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (dof / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, dof).expect("dof >= 1");
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(Correlation { r, p_value, n })
}

/// Summary of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub ece: f64,
    /// `None` when every prediction is correct (or every one wrong).
    pub auroc: Option<f64>,
    pub brier: f64,
    pub var: Option<f64>,
    pub ks: Option<f64>,
    pub n: usize,
    pub s: usize,
    pub spec: Option<TransformSpec>,
    pub a: Option<f64>,
}

impl MetricsReport {
    pub fn evaluate(
        preds: &[ScoredPrediction],
        s: usize,
        spec: Option<TransformSpec>,
        a: Option<f64>,
    ) -> Result<Self, MetricsError> {
        let auroc = match auroc(preds) {
            Ok(v) => Some(v),
            Err(MetricsError::Undefined(msg)) => {
                log::warn!("{msg}");
                None
            }
            Err(e) => return Err(e),
        };
        Ok(Self {
            acc: accuracy(preds)?,
            ece: ece(preds)?,
            auroc,
            brier: brier(preds)?,
            var: None,
            ks: None,
            n: preds.len(),
            s,
            spec,
            a,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pred(c: f64, correct: bool, k: usize) -> ScoredPrediction {
        ScoredPrediction::new(Confidence::new(c).unwrap(), Label(0), Label(if correct { 0 } else { 1 }), k).unwrap()
    }

    fn naive(n_correct: usize, n: usize) -> Vec<ScoredPrediction> {
        (0..n).map(|i| pred(1.0, i < n_correct, 10)).collect()
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&naive(5, 5)).unwrap(), 1.0);
        assert_eq!(accuracy(&naive(94, 100)).unwrap(), 0.94);
        assert_eq!(accuracy(&naive(0, 7)).unwrap(), 0.0);
        assert_eq!(accuracy(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn naive_rows() {
        let p = naive(94, 100);
        assert_eq!(ece(&p).unwrap(), 1.0 - accuracy(&p).unwrap());
        assert_abs_diff_eq!(ece(&p).unwrap(), 0.060, epsilon = 1e-12);
        assert_abs_diff_eq!(brier(&p).unwrap(), 0.120, epsilon = 1e-12);
        assert_eq!(auroc(&p).unwrap(), 0.5);
    }

    #[test]
    fn calibrated_toy_has_zero_ece() {
        let mut p = Vec::new();
        for i in 0..10 {
            p.push(pred(0.8, i < 8, 2));
            p.push(pred(0.2, i < 2, 2));
        }
        assert_abs_diff_eq!(ece(&p).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn ece_hand_fixture() {
        // bins (1/15 wide): 0.05->0, 0.12->1, 0.3->4, 0.33->4, 0.5->7, 0.52->7,
        // 0.7->10, 0.9->13, 0.95->14, 1.0->14
        let p = vec![
            pred(0.05, false, 3),
            pred(0.12, true, 3),
            pred(0.30, false, 3),
            pred(0.33, true, 3),
            pred(0.50, true, 3),
            pred(0.52, false, 3),
            pred(0.70, true, 3),
            pred(0.90, true, 3),
            pred(0.95, true, 3),
            pred(1.00, false, 3),
        ];
        // per-bin |acc - conf| * n_b:
        // b0: 1*0.05, b1: 1*0.88, b4: 2*|0.5-0.315|, b7: 2*|0.5-0.51|,
        // b10: 0.3, b13: 0.1, b14: 2*|0.5-0.975|
        let expected = (0.05 + 0.88 + 0.37 + 0.02 + 0.3 + 0.1 + 0.95) / 10.0;
        assert_abs_diff_eq!(ece(&p).unwrap(), expected, epsilon = 1e-12);
        let bins = reliability_bins(&p).unwrap();
        assert_eq!(bins.total(), 10);
        assert_eq!(bins.counts[4], 2);
        assert_eq!(bins.counts[14], 2);
    }

    #[test]
    fn bin_boundaries_are_left_open() {
        let edges = bin_edges();
        assert_eq!(bin_of(&edges, 0.0), 0);
        assert_eq!(bin_of(&edges, edges[1]), 0);
        assert_eq!(bin_of(&edges, edges[1] + 1e-12), 1);
        assert_eq!(bin_of(&edges, 1.0), 14);
    }

    #[test]
    fn brier_examples() {
        assert_abs_diff_eq!(brier(&[pred(0.7, true, 2)]).unwrap(), 0.18, epsilon = 1e-12);
        // wrong with K=3, c=0.6: (0.6)^2 + (0.2-1)^2 + 0.2^2
        assert_abs_diff_eq!(brier(&[pred(0.6, false, 3)]).unwrap(), 0.36 + 0.64 + 0.04, epsilon = 1e-12);
    }

    fn brute_brier(p: &[ScoredPrediction]) -> f64 {
        let mut total = 0.0;
        for s in p {
            let k = s.num_classes;
            let c = s.confidence.value();
            for class in 0..k {
                let q = if class == s.predicted.0 { c } else { (1.0 - c) / (k - 1) as f64 };
                let y = if class == s.truth.0 { 1.0 } else { 0.0 };
                total += (q - y) * (q - y);
            }
        }
        total / p.len() as f64
    }

    fn brute_auroc(p: &[ScoredPrediction]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for a in p.iter().filter(|x| x.is_correct()) {
            for b in p.iter().filter(|x| !x.is_correct()) {
                pairs += 1.0;
                let (ca, cb) = (a.confidence.value(), b.confidence.value());
                if ca > cb {
                    wins += 1.0;
                } else if ca == cb {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize) -> Vec<ScoredPrediction> {
        (0..n)
            .map(|_| {
                let k = rng.random_range(2..12);
                // coarse levels force ties
                let c = rng.random_range(0..=20) as f64 / 20.0;
                let predicted = rng.random_range(0..k);
                let truth = if rng.random::<f64>() < c { predicted } else { rng.random_range(0..k) };
                ScoredPrediction::new(Confidence::new(c).unwrap(), Label(predicted), Label(truth), k).unwrap()
            })
            .collect()
    }

    #[test]
    fn brier_and_auroc_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.random_range(2..=200);
            let p = random_set(&mut rng, n);
            assert_abs_diff_eq!(brier(&p).unwrap(), brute_brier(&p), epsilon = 1e-12);
            if let Ok(a) = auroc(&p) {
                assert_eq!(a, brute_auroc(&p));
            }
        }
    }

    #[test]
    fn auroc_examples() {
        let mut p = vec![pred(0.9, true, 2); 5];
        p.extend(vec![pred(0.1, false, 2); 4]);
        assert_eq!(auroc(&p).unwrap(), 1.0);
        let tied: Vec<_> = (0..6).map(|i| pred(0.4, i % 2 == 0, 2)).collect();
        assert_eq!(auroc(&tied).unwrap(), 0.5);
        assert!(matches!(auroc(&naive(4, 4)), Err(MetricsError::Undefined(_))));
    }

    /// Student-t survival by Simpson quadrature of the density.
    fn t_sf_reference(t: f64, dof: f64) -> f64 {
        let ln_c = statrs::function::gamma::ln_gamma((dof + 1.0) / 2.0)
            - statrs::function::gamma::ln_gamma(dof / 2.0)
            - 0.5 * (dof * std::f64::consts::PI).ln();
        let pdf = |x: f64| (ln_c - (dof + 1.0) / 2.0 * (1.0 + x * x / dof).ln()).exp();
        let steps = 200_000;
        let h = t / steps as f64;
        let mut acc = pdf(0.0) + pdf(t);
        for i in 1..steps {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(i as f64 * h);
        }
        0.5 - acc * h / 3.0
    }

    /// Data with sample correlation exactly `r`: y = r x + sqrt(1-r^2) e, with
    /// e orthogonalised against x and both standardised.
    fn with_correlation(r: f64, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let standardise = |v: Vec<f64>| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let c: Vec<f64> = v.iter().map(|x| x - m).collect();
            let s = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            c.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let x = standardise((0..n).map(|_| rng.random::<f64>()).collect());
        let e0 = standardise((0..n).map(|_| rng.random::<f64>()).collect());
        let proj: f64 = x.iter().zip(&e0).map(|(a, b)| a * b).sum();
        let e = standardise(e0.iter().zip(&x).map(|(b, a)| b - proj * a).collect());
        let y = x.iter().zip(&e).map(|(a, b)| r * a + (1.0 - r * r).sqrt() * b).collect();
        (x, y)
    }

    #[test]
    fn pearson_examples() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let c = pearson_r(&xs, &ys).unwrap();
        assert_abs_diff_eq!(c.r, 1.0, epsilon = 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert_abs_diff_eq!(pearson_r(&xs, &neg).unwrap().r, -1.0, epsilon = 1e-12);
        assert!(matches!(pearson_r(&xs, &[1.0; 10]), Err(MetricsError::Undefined(_))));
        assert!(pearson_r(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(pearson_r(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pearson_p_values_match_t_reference() {
        // correlation magnitudes of the kind reported across calibration runs
        for (r, n) in [(0.42, 44), (0.46, 44), (0.89, 13), (-0.26, 13), (0.60, 13), (-0.75, 13), (0.73, 17)] {
            let (x, y) = with_correlation(r, n, 17);
            let c = pearson_r(&x, &y).unwrap();
            assert_abs_diff_eq!(c.r, r, epsilon = 1e-12);
            let dof = (n - 2) as f64;
            let t = r.abs() * (dof / (1.0 - r * r)).sqrt();
            let reference = 2.0 * t_sf_reference(t, dof);
            assert!((c.p_value - reference).abs() <= 0.1 * reference, "r={r}: {} vs {reference}", c.p_value);
        }
    }

    proptest! {
        #[test]
        fn auroc_invariant_under_monotone_maps(seed in any::<u64>(), n in 4usize..80) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_set(&mut rng, n);
            if let Ok(a) = auroc(&p) {
                let mapped: Vec<_> = p.iter().map(|s| ScoredPrediction {
                    confidence: Confidence::new(s.confidence.value().powi(3) * 0.5 + 0.1).unwrap(), ..*s
                }).collect();
                prop_assert_eq!(auroc(&mapped).unwrap(), a);
            }
        }

        #[test]
        fn ece_brier_permutation_invariant(seed in any::<u64>(), n in 1usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_set(&mut rng, n);
            let mut q = p.clone();
            q.reverse();
            q.rotate_left(n / 3);
            prop_assert!((ece(&p).unwrap() - ece(&q).unwrap()).abs() <= 1e-12);
            prop_assert!((brier(&p).unwrap() - brier(&q).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn lowering_wrong_confidence_lowers_brier(seed in any::<u64>(), n in 1usize..30, c in 0.5f64..1.0, d in 0.01f64..0.4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = random_set(&mut rng, n);
            p.push(pred(c, false, 5));
            let before = brier(&p).unwrap();
            let last = p.len() - 1;
            p[last].confidence = Confidence::new(c - d).unwrap();
            prop_assert!(brier(&p).unwrap() < before);
        }

        #[test]
        fn naive_identities_any_dataset(n in 1usize..300, frac in 0.0f64..=1.0) {
            let n_correct = ((n as f64) * frac) as usize;
            let p = naive(n_correct, n);
            let acc = accuracy(&p).unwrap();
            prop_assert_eq!(ece(&p).unwrap(), 1.0 - acc);
            prop_assert!((brier(&p).unwrap() - 2.0 * (1.0 - acc)).abs() <= 1e-12);
            if n_correct > 0 && n_correct < n {
                prop_assert_eq!(auroc(&p).unwrap(), 0.5);
            }
        }
    }
}
