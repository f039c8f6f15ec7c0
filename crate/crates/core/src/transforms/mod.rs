//! Randomized input transformations used to probe a classifier.
//!
//! Every random draw is keyed by a [`SampleSeed`], so a transformed image is a
//! pure function of `(image, spec, seed)` no matter which thread produces it.
//! Geometric transforms resample with bilinear interpolation about the pixel
//! center `((W-1)/2, (H-1)/2)` and read zeros outside the source.

mod geometry;
mod image;

pub use geometry::{rotate_by, sample_bilinear};
pub use image::{Image, ImageError, Shape, TENSOR_MAGIC, TENSOR_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("transform parameter `{name}` must be finite and >= 0, got {value}")]
    Magnitude { name: &'static str, value: f64 },
    #[error("elastic smoothing sigma_e must be > 0 when alpha > 0")]
    ElasticSigma,
}

/// Parameters of one randomized transform family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TransformSpec {
    /// Additive i.i.d. `N(0, sigma^2)` noise per element.
    Gaussian { sigma: f64 },
    /// Rotation by an angle drawn from `U(-max_degrees, max_degrees)`.
    Rotation { max_degrees: f64 },
    /// Rotation, per-axis translation (fraction of side) and isotropic scale
    /// drawn from `U(1 - max_scale_delta, 1 + max_scale_delta)`.
    Affine {
        max_degrees: f64,
        max_translate: f64,
        max_scale_delta: f64,
    },
    /// Smoothed uniform displacement field, `alpha` pixels, `sigma_e` blur.
    Elastic { alpha: f64, sigma_e: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TransformFamily {
    Gaussian,
    Rotation,
    Affine,
    Elastic,
}

impl TransformFamily {
    pub const ALL: [TransformFamily; 4] = [
        TransformFamily::Gaussian,
        TransformFamily::Rotation,
        TransformFamily::Affine,
        TransformFamily::Elastic,
    ];
}

impl fmt::Display for TransformFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Gaussian => "gaussian",
            Self::Rotation => "rotation",
            Self::Affine => "affine",
            Self::Elastic => "elastic",
        };
        f.write_str(s)
    }
}

impl TransformSpec {
    pub fn family(&self) -> TransformFamily {
        match self {
            Self::Gaussian { .. } => TransformFamily::Gaussian,
            Self::Rotation { .. } => TransformFamily::Rotation,
            Self::Affine { .. } => TransformFamily::Affine,
            Self::Elastic { .. } => TransformFamily::Elastic,
        }
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        let check = |name: &'static str, value: f64| {
            if value.is_finite() && value >= 0.0 {
                Ok(())
            } else {
                Err(TransformError::Magnitude { name, value })
            }
        };
        match *self {
            Self::Gaussian { sigma } => check("sigma", sigma),
            Self::Rotation { max_degrees } => check("max_degrees", max_degrees),
            Self::Affine {
                max_degrees,
                max_translate,
                max_scale_delta,
            } => {
                check("max_degrees", max_degrees)?;
                check("max_translate", max_translate)?;
                check("max_scale_delta", max_scale_delta)
            }
            Self::Elastic { alpha, sigma_e } => {
                check("alpha", alpha)?;
                check("sigma_e", sigma_e)?;
                if alpha > 0.0 && sigma_e <= 0.0 {
                    return Err(TransformError::ElasticSigma);
                }
                Ok(())
            }
        }
    }

    /// Short stable label, e.g. `gaussian(sigma=0.1)`.
    pub fn label(&self) -> String {
        match *self {
            Self::Gaussian { sigma } => format!("gaussian(sigma={sigma})"),
            Self::Rotation { max_degrees } => format!("rotation(deg={max_degrees})"),
            Self::Affine {
                max_degrees,
                max_translate,
                max_scale_delta,
            } => format!("affine(deg={max_degrees},translate={max_translate},scale={max_scale_delta})"),
            Self::Elastic { alpha, sigma_e } => format!("elastic(alpha={alpha},sigma={sigma_e})"),
        }
    }
}

/// Key of one random draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SampleSeed {
    pub run_seed: u64,
    pub sample_index: u64,
    pub draw_index: u64,
}

const STREAM_TAG: u64 = 0x5454_4143_414c_4942;

impl SampleSeed {
    pub fn new(run_seed: u64, sample_index: u64, draw_index: u64) -> Self {
        Self {
            run_seed,
            sample_index,
            draw_index,
        }
    }

    /// ChaCha keyed directly by the triple: every key is a distinct,
    /// independent counter-mode stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.run_seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.sample_index.to_le_bytes());
        key[16..24].copy_from_slice(&self.draw_index.to_le_bytes());
        key[24..].copy_from_slice(&STREAM_TAG.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}

fn symmetric(rng: &mut impl Rng, half_width: f64) -> f64 {
    if half_width == 0.0 {
        return 0.0;
    }
    (2.0 * rng.random::<f64>() - 1.0) * half_width
}

/// Applies one seeded draw of `spec` to `img`.
pub fn apply_transform(img: &Image, spec: &TransformSpec, seed: SampleSeed) -> Result<Image, TransformError> {
    spec.validate()?;
    let mut rng = seed.rng();
    let out = match *spec {
        TransformSpec::Gaussian { sigma } => {
            if sigma == 0.0 {
                return Ok(img.clone());
            }
            let data = img
                .data()
                .iter()
                .map(|&v| v as f64 + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Image::from_clamped(img.shape(), data)
        }
        TransformSpec::Rotation { max_degrees } => {
            let angle = symmetric(&mut rng, max_degrees);
            if angle == 0.0 {
                return Ok(img.clone());
            }
            rotate_by(img, angle)
        }
        TransformSpec::Affine {
            max_degrees,
            max_translate,
            max_scale_delta,
        } => {
            let angle = symmetric(&mut rng, max_degrees);
            let shape = img.shape();
            let tx = symmetric(&mut rng, max_translate * shape.width as f64);
            let ty = symmetric(&mut rng, max_translate * shape.height as f64);
            let scale = 1.0 + symmetric(&mut rng, max_scale_delta);
            if angle == 0.0 && tx == 0.0 && ty == 0.0 && scale == 1.0 {
                return Ok(img.clone());
            }
            geometry::affine(img, angle, tx, ty, scale)
        }
        TransformSpec::Elastic { alpha, sigma_e } => {
            if alpha == 0.0 {
                return Ok(img.clone());
            }
            geometry::elastic(img, alpha, sigma_e, &mut rng)
        }
    };
    Ok(out)
}

/// Hyperparameter grid searched for each family.
pub fn transform_grid(family: TransformFamily) -> Vec<TransformSpec> {
    match family {
        TransformFamily::Gaussian => [0.01, 0.05, 0.1, 0.12, 0.14, 0.16, 0.18, 0.2]
            .into_iter()
            .map(|sigma| TransformSpec::Gaussian { sigma })
            .collect(),
        TransformFamily::Elastic => {
            let mut out = Vec::new();
            for alpha in [10.0, 20.0, 50.0, 70.0] {
                for sigma_e in [2.0, 5.0, 10.0] {
                    out.push(TransformSpec::Elastic { alpha, sigma_e });
                }
            }
            out
        }
        TransformFamily::Rotation => [10.0, 20.0, 30.0, 40.0, 50.0, 60.0]
            .into_iter()
            .map(|max_degrees| TransformSpec::Rotation { max_degrees })
            .collect(),
        TransformFamily::Affine => {
            let mut out = Vec::new();
            for max_degrees in [0.0, 10.0, 30.0] {
                for max_translate in [0.0, 0.1, 0.3] {
                    for max_scale_delta in [0.0, 0.1, 0.3, 1.0] {
                        out.push(TransformSpec::Affine {
                            max_degrees,
                            max_translate,
                            max_scale_delta,
                        });
                    }
                }
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(shape: Shape) -> Image {
        let n = shape.len();
        let data = (0..n).map(|i| 0.2 + 0.6 * (i as f32) / (n as f32)).collect();
        Image::new(shape, data).unwrap()
    }

    fn seed(d: u64) -> SampleSeed {
        SampleSeed::new(42, 3, d)
    }

    #[test]
    fn zero_magnitude_is_identity() {
        let img = ramp(Shape::new(5, 7, 3));
        let specs = [
            TransformSpec::Gaussian { sigma: 0.0 },
            TransformSpec::Rotation { max_degrees: 0.0 },
            TransformSpec::Affine {
                max_degrees: 0.0,
                max_translate: 0.0,
                max_scale_delta: 0.0,
            },
            TransformSpec::Elastic { alpha: 0.0, sigma_e: 0.0 },
            TransformSpec::Elastic { alpha: 0.0, sigma_e: 3.0 },
        ];
        for spec in specs {
            for d in 0..5 {
                assert_eq!(apply_transform(&img, &spec, seed(d)).unwrap(), img, "{spec:?}");
            }
        }
    }

    #[test]
    fn half_turn_flips_both_axes() {
        let img = Image::new(Shape::new(2, 2, 1), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let out = rotate_by(&img, 180.0);
        assert_eq!(out.data(), &[0.4, 0.3, 0.2, 0.1]);
        let img3 = ramp(Shape::new(3, 4, 2));
        let out3 = rotate_by(&img3, 180.0);
        for r in 0..3 {
            for c in 0..4 {
                for ch in 0..2 {
                    assert_eq!(out3.get(r, c, ch), img3.get(2 - r, 3 - c, ch));
                }
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let img = ramp(Shape::new(3, 3, 1));
        let bad = [
            TransformSpec::Gaussian { sigma: -0.1 },
            TransformSpec::Rotation { max_degrees: f64::NAN },
            TransformSpec::Affine {
                max_degrees: 1.0,
                max_translate: -1.0,
                max_scale_delta: 0.0,
            },
            TransformSpec::Elastic { alpha: 5.0, sigma_e: 0.0 },
        ];
        for spec in bad {
            assert!(apply_transform(&img, &spec, seed(0)).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn grids_match_published_ranges() {
        let g = transform_grid(TransformFamily::Gaussian);
        assert_eq!(g.len(), 8);
        assert_eq!(g[0], TransformSpec::Gaussian { sigma: 0.01 });
        assert_eq!(transform_grid(TransformFamily::Elastic).len(), 12);
        let r = transform_grid(TransformFamily::Rotation);
        assert_eq!(r.len(), 6);
        assert_eq!(r[5], TransformSpec::Rotation { max_degrees: 60.0 });
        assert_eq!(transform_grid(TransformFamily::Affine).len(), 36);
        for fam in TransformFamily::ALL {
            assert!(transform_grid(fam).iter().all(|s| s.family() == fam && s.validate().is_ok()));
        }
    }

    #[test]
    fn spec_json_schema() {
        let s: TransformSpec = serde_json::from_str(r#"{"kind":"elastic","alpha":10,"sigma_e":2}"#).unwrap();
        assert_eq!(s, TransformSpec::Elastic { alpha: 10.0, sigma_e: 2.0 });
        let a = TransformSpec::Affine {
            max_degrees: 10.0,
            max_translate: 0.1,
            max_scale_delta: 0.3,
        };
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            r#"{"kind":"affine","max_degrees":10.0,"max_translate":0.1,"max_scale_delta":0.3}"#
        );
        assert!(serde_json::from_str::<TransformSpec>(r#"{"kind":"blur","sigma":1}"#).is_err());
    }

    #[test]
    fn gaussian_noise_preserves_mean() {
        let shape = Shape::new(16, 16, 3);
        let img = Image::filled(shape, 0.5).unwrap();
        let sigma = 0.05;
        let reps = 200;
        let mut avg = 0.0;
        for d in 0..reps {
            let out = apply_transform(&img, &TransformSpec::Gaussian { sigma }, seed(d)).unwrap();
            avg += out.mean() - img.mean();
        }
        avg /= reps as f64;
        // seed-averaged bound: 3 sigma / sqrt(HWC * reps)
        assert!(avg.abs() <= 3.0 * sigma / ((shape.len() * reps as usize) as f64).sqrt(), "{avg}");
        let single = apply_transform(&img, &TransformSpec::Gaussian { sigma }, seed(0)).unwrap();
        assert!((single.mean() - 0.5).abs() <= 3.0 * sigma / (shape.len() as f64).sqrt());
    }

    #[test]
    fn seeds_give_distinct_streams() {
        let img = ramp(Shape::new(4, 4, 1));
        let spec = TransformSpec::Gaussian { sigma: 0.1 };
        let a = apply_transform(&img, &spec, SampleSeed::new(1, 0, 0)).unwrap();
        let b = apply_transform(&img, &spec, SampleSeed::new(1, 0, 1)).unwrap();
        let c = apply_transform(&img, &spec, SampleSeed::new(1, 1, 0)).unwrap();
        let d = apply_transform(&img, &spec, SampleSeed::new(2, 0, 0)).unwrap();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn deterministic_across_threads() {
        let img = ramp(Shape::new(9, 9, 1));
        let spec = TransformSpec::Elastic { alpha: 10.0, sigma_e: 2.0 };
        let here = apply_transform(&img, &spec, seed(7)).unwrap();
        let there = std::thread::spawn(move || apply_transform(&img, &spec, seed(7)).unwrap())
            .join()
            .unwrap();
        assert_eq!(here.data(), there.data());
    }

    fn any_spec() -> impl Strategy<Value = TransformSpec> {
        prop_oneof![
            (0.0f64..0.5).prop_map(|sigma| TransformSpec::Gaussian { sigma }),
            (0.0f64..90.0).prop_map(|max_degrees| TransformSpec::Rotation { max_degrees }),
            (0.0f64..45.0, 0.0f64..0.4, 0.0f64..1.0).prop_map(|(d, t, s)| TransformSpec::Affine {
                max_degrees: d,
                max_translate: t,
                max_scale_delta: s
            }),
            (0.0f64..70.0, 0.5f64..10.0).prop_map(|(alpha, sigma_e)| TransformSpec::Elastic { alpha, sigma_e }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn shape_range_and_determinism(spec in any_spec(), h in 1usize..9, w in 1usize..9, c in 1usize..4, d in any::<u64>()) {
            let img = ramp(Shape::new(h, w, c));
            let a = apply_transform(&img, &spec, seed(d)).unwrap();
            let b = apply_transform(&img, &spec, seed(d)).unwrap();
            prop_assert_eq!(a.shape(), img.shape());
            prop_assert!(a.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
            prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
