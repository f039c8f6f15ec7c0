use super::{check_shape, Label, Oracle, OracleError, WhiteBox};
use crate::transforms::{Image, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Scalar gain applied to the encoder output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Gain {
    /// `h(x) = J x`
    Identity,
    /// `h(x) = (offset + slope * |x_1|) J x`, with `x_1` the first element.
    AbsFirst { offset: f64, slope: f64 },
}

impl Gain {
    /// The default nonlinear variant, `0.5 + |x_1|`.
    pub const DEFAULT_NONLINEAR: Gain = Gain::AbsFirst {
        offset: 0.5,
        slope: 1.0,
    };

    fn at(&self, x: &[f32]) -> f64 {
        match *self {
            Gain::Identity => 1.0,
            Gain::AbsFirst { offset, slope } => offset + slope * (x[0] as f64).abs(),
        }
    }
}

/// Analytic classifier `argmax(W h(x) + b)` with `h(x) = gain(x) J x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelParts", into = "ModelParts")]
pub struct SyntheticModel {
    input_shape: Shape,
    latent_dim: usize,
    num_classes: usize,
    encoder: Vec<f64>,
    gain: Gain,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelParts {
    input_shape: Shape,
    latent_dim: usize,
    encoder: Vec<f64>,
    gain: Gain,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl TryFrom<ModelParts> for SyntheticModel {
    type Error = OracleError;
    fn try_from(p: ModelParts) -> Result<Self, OracleError> {
        SyntheticModel::new(p.input_shape, p.latent_dim, p.encoder, p.gain, p.weights, p.biases)
    }
}

impl From<SyntheticModel> for ModelParts {
    fn from(m: SyntheticModel) -> Self {
        ModelParts {
            input_shape: m.input_shape,
            latent_dim: m.latent_dim,
            encoder: m.encoder,
            gain: m.gain,
            weights: m.weights,
            biases: m.biases,
        }
    }
}

/// Parameters for [`SyntheticModel::random`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomModelConfig {
    pub input_shape: Shape,
    pub latent_dim: usize,
    pub num_classes: usize,
    pub gain: Gain,
    pub seed: u64,
}

impl SyntheticModel {
    pub fn new(
        input_shape: Shape,
        latent_dim: usize,
        encoder: Vec<f64>,
        gain: Gain,
        weights: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<Self, OracleError> {
        let d_in = input_shape.len();
        let num_classes = biases.len();
        if latent_dim == 0 || d_in == 0 {
            return Err(OracleError::Config("latent and input dimensions must be >= 1".into()));
        }
        if num_classes < 2 {
            return Err(OracleError::Config(format!("need >= 2 classes, got {num_classes}")));
        }
        if encoder.len() != latent_dim * d_in {
            return Err(OracleError::Config(format!(
                "encoder has {} entries, expected {latent_dim} x {d_in}",
                encoder.len()
            )));
        }
        if weights.len() != num_classes * latent_dim {
            return Err(OracleError::Config(format!(
                "weights have {} entries, expected {num_classes} x {latent_dim}",
                weights.len()
            )));
        }
        let finite = encoder.iter().chain(&weights).chain(&biases).all(|v| v.is_finite());
        let gain_ok = match gain {
            Gain::Identity => true,
            Gain::AbsFirst { offset, slope } => offset.is_finite() && slope.is_finite(),
        };
        if !finite || !gain_ok {
            return Err(OracleError::Config("model parameters must be finite".into()));
        }
        Ok(Self {
            input_shape,
            latent_dim,
            num_classes,
            encoder,
            gain,
            weights,
            biases,
        })
    }

    /// Random model with row-centred `N(0, 1/d_in)` encoder rows (so a flat
    /// image encodes to zero), `N(0, 1)` class weights and `N(0, 0.25)` biases.
    pub fn random(cfg: &RandomModelConfig) -> Result<Self, OracleError> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d_in = cfg.input_shape.len();
        let scale = 1.0 / (d_in as f64).sqrt();
        let mut encoder = Vec::with_capacity(cfg.latent_dim * d_in);
        for _ in 0..cfg.latent_dim {
            let row: Vec<f64> = (0..d_in).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
            let mean = row.iter().sum::<f64>() / d_in as f64;
            encoder.extend(row.into_iter().map(|v| v - mean));
        }
        let weights = (0..cfg.num_classes * cfg.latent_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let biases = (0..cfg.num_classes)
            .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self::new(cfg.input_shape, cfg.latent_dim, encoder, cfg.gain, weights, biases)
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn class_count(&self) -> usize {
        self.num_classes
    }

    pub fn gain(&self) -> Gain {
        self.gain
    }

    pub fn encoder(&self) -> &[f64] {
        &self.encoder
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    /// Same model with weights and biases multiplied by `factor`.
    pub fn with_logit_scale(&self, factor: f64) -> Self {
        let mut m = self.clone();
        m.weights.iter_mut().for_each(|w| *w *= factor);
        m.biases.iter_mut().for_each(|b| *b *= factor);
        m
    }

    pub fn with_gain(&self, gain: Gain) -> Self {
        let mut m = self.clone();
        m.gain = gain;
        m
    }

    pub fn encode(&self, img: &Image) -> Result<Vec<f64>, OracleError> {
        check_shape(Some(self.input_shape), img)?;
        let x = img.data();
        let g = self.gain.at(x);
        let d_in = self.input_dim();
        Ok(self
            .encoder
            .chunks_exact(d_in)
            .map(|row| g * row.iter().zip(x).map(|(j, &v)| j * v as f64).sum::<f64>())
            .collect())
    }

    pub fn logits(&self, img: &Image) -> Result<Vec<f64>, OracleError> {
        let z = self.encode(img)?;
        Ok(self
            .weights
            .chunks_exact(self.latent_dim)
            .zip(&self.biases)
            .map(|(w, b)| w.iter().zip(&z).map(|(a, c)| a * c).sum::<f64>() + b)
            .collect())
    }

    pub fn softmax(&self, img: &Image) -> Result<Vec<f64>, OracleError> {
        let logits = self.logits(img)?;
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        Ok(exp.into_iter().map(|e| e / total).collect())
    }

    /// `||J^T (w_a - w_b)||`, the latent noise scale per unit of input noise
    /// for the identity-gain encoder.
    pub fn margin_direction_norm(&self, class_a: Label, class_b: Label) -> f64 {
        let d_in = self.input_dim();
        let wa = &self.weights[class_a.0 * self.latent_dim..(class_a.0 + 1) * self.latent_dim];
        let wb = &self.weights[class_b.0 * self.latent_dim..(class_b.0 + 1) * self.latent_dim];
        let mut v = vec![0.0; d_in];
        for (l, row) in self.encoder.chunks_exact(d_in).enumerate() {
            let dw = wa[l] - wb[l];
            for (vi, j) in v.iter_mut().zip(row) {
                *vi += dw * j;
            }
        }
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn check_label(&self, l: Label) -> Result<(), OracleError> {
        if l.0 < self.num_classes {
            Ok(())
        } else {
            Err(OracleError::LabelOutOfRange {
                label: l.0,
                num_classes: self.num_classes,
            })
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Oracle for SyntheticModel {
    fn top1(&self, img: &Image) -> Result<Label, OracleError> {
        Ok(Label(argmax(&self.logits(img)?)))
    }

    fn input_shape(&self) -> Option<Shape> {
        Some(self.input_shape)
    }

    fn num_classes(&self) -> Option<usize> {
        Some(self.num_classes)
    }

    fn white_box(&self) -> Option<&dyn WhiteBox> {
        Some(self)
    }
}

impl WhiteBox for SyntheticModel {
    fn latent_margin(&self, img: &Image, class_a: Label, class_b: Label) -> Result<f64, OracleError> {
        self.check_label(class_a)?;
        self.check_label(class_b)?;
        if class_a == class_b {
            return Err(OracleError::SameClass(class_a));
        }
        let z = self.encode(img)?;
        let wa = &self.weights[class_a.0 * self.latent_dim..(class_a.0 + 1) * self.latent_dim];
        let wb = &self.weights[class_b.0 * self.latent_dim..(class_b.0 + 1) * self.latent_dim];
        let dot: f64 = wa.iter().zip(wb).zip(&z).map(|((a, b), c)| (a - b) * c).sum();
        Ok(dot + self.biases[class_a.0] - self.biases[class_b.0])
    }

    fn ranked_pair(&self, img: &Image) -> Result<(Label, Label), OracleError> {
        let logits = self.logits(img)?;
        let top = argmax(&logits);
        let mut second: Option<usize> = None;
        for (i, &v) in logits.iter().enumerate() {
            if i == top {
                continue;
            }
            match second {
                Some(s) if logits[s] >= v => {}
                _ => second = Some(i),
            }
        }
        Ok((Label(top), Label(second.expect("at least two classes"))))
    }

    fn true_confidence(&self, img: &Image) -> Result<f64, OracleError> {
        let p = self.softmax(img)?;
        Ok(p[argmax(&p)])
    }
}
