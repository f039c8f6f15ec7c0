use super::image::Image;
use rand::Rng;

const SNAP: f64 = 1e-9;

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP {
        r
    } else {
        v
    }
}

/// Bilinear sample at fractional `(x, y)` = (column, row); zero outside.
pub fn sample_bilinear(img: &Image, x: f64, y: f64, channel: usize) -> f64 {
    let shape = img.shape();
    let (x, y) = (snap(x), snap(y));
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let at = |col: f64, row: f64| -> f64 {
        if col < 0.0 || row < 0.0 || col >= shape.width as f64 || row >= shape.height as f64 {
            0.0
        } else {
            img.get(row as usize, col as usize, channel) as f64
        }
    };
    if fx == 0.0 && fy == 0.0 {
        return at(x0, y0);
    }
    (1.0 - fx) * (1.0 - fy) * at(x0, y0)
        + fx * (1.0 - fy) * at(x0 + 1.0, y0)
        + (1.0 - fx) * fy * at(x0, y0 + 1.0)
        + fx * fy * at(x0 + 1.0, y0 + 1.0)
}

/// Resamples `img` through an inverse map from output to source coordinates.
fn remap(img: &Image, mut source: impl FnMut(usize, usize) -> (f64, f64)) -> Image {
    let shape = img.shape();
    let mut data = Vec::with_capacity(shape.len());
    for row in 0..shape.height {
        for col in 0..shape.width {
            let (sx, sy) = source(row, col);
            for ch in 0..shape.channels {
                data.push(sample_bilinear(img, sx, sy, ch));
            }
        }
    }
    Image::from_clamped(shape, data)
}

fn center(img: &Image) -> (f64, f64) {
    let s = img.shape();
    ((s.width as f64 - 1.0) / 2.0, (s.height as f64 - 1.0) / 2.0)
}

/// Rotates by a fixed angle in degrees about the image center.
pub fn rotate_by(img: &Image, degrees: f64) -> Image {
    affine(img, degrees, 0.0, 0.0, 1.0)
}

/// Forward map `p' = scale * R(angle) (p - c) + c + t`, sampled through its
/// inverse.
pub(crate) fn affine(img: &Image, degrees: f64, tx: f64, ty: f64, scale: f64) -> Image {
    let (cx, cy) = center(img);
    let (sin, cos) = degrees.to_radians().sin_cos();
    // scale approaching zero maps every output pixel far outside the source
    let inv_scale = 1.0 / scale.max(1e-6);
    remap(img, |row, col| {
        let qx = col as f64 - cx - tx;
        let qy = row as f64 - cy - ty;
        let sx = (cos * qx + sin * qy) * inv_scale + cx;
        let sy = (-sin * qx + cos * qy) * inv_scale + cy;
        (sx, sy)
    })
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Separable blur; at the borders the truncated kernel is renormalized over
/// the in-bounds taps.
fn blur(field: &[f64], height: usize, width: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for row in 0..height {
            for col in 0..width {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (i, &w) in kernel.iter().enumerate() {
                    let off = i as isize - radius;
                    let (r, c) = if horizontal {
                        (row as isize, col as isize + off)
                    } else {
                        (row as isize + off, col as isize)
                    };
                    if r < 0 || c < 0 || r >= height as isize || c >= width as isize {
                        continue;
                    }
                    acc += w * src[r as usize * width + c as usize];
                    norm += w;
                }
                out[row * width + col] = acc / norm;
            }
        }
        out
    };
    let h = pass(field, true);
    pass(&h, false)
}

pub(crate) fn elastic(img: &Image, alpha: f64, sigma: f64, rng: &mut impl Rng) -> Image {
    let shape = img.shape();
    let n = shape.height * shape.width;
    let mut uniform = || -> Vec<f64> { (0..n).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect() };
    let ux = uniform();
    let uy = uniform();
    let kernel = gaussian_kernel(sigma);
    let dx = blur(&ux, shape.height, shape.width, &kernel);
    let dy = blur(&uy, shape.height, shape.width, &kernel);
    remap(img, |row, col| {
        let i = row * shape.width + col;
        (col as f64 + alpha * dx[i], row as f64 + alpha * dy[i])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::Shape;

    #[test]
    fn bilinear_midpoint_and_padding() {
        let img = Image::new(Shape::new(1, 2, 1), vec![0.0, 1.0]).unwrap();
        assert!((sample_bilinear(&img, 0.5, 0.0, 0) - 0.5).abs() < 1e-12);
        assert_eq!(sample_bilinear(&img, -1.0, 0.0, 0), 0.0);
        assert_eq!(sample_bilinear(&img, 1.0, 0.0, 0), 1.0);
        // halfway past the right edge blends with zero padding
        assert!((sample_bilinear(&img, 1.5, 0.0, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn blur_of_constant_is_constant() {
        let field = vec![0.3; 20];
        let k = gaussian_kernel(2.0);
        assert_eq!(k.len(), 17);
        for v in blur(&field, 4, 5, &k) {
            assert!((v - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn translation_shifts_content() {
        let img = Image::new(Shape::new(1, 3, 1), vec![0.2, 0.5, 0.8]).unwrap();
        let out = affine(&img, 0.0, 1.0, 0.0, 1.0);
        assert_eq!(out.data(), &[0.0, 0.2, 0.5]);
    }

    #[test]
    fn quarter_turn_on_square() {
        let img = Image::new(Shape::new(2, 2, 1), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let out = rotate_by(&img, 90.0);
        let mut sorted: Vec<f32> = out.data().to_vec();
        sorted.sort_by(f32::total_cmp);
        assert_eq!(sorted, vec![0.1, 0.2, 0.3, 0.4]);
        assert_ne!(out.data(), img.data());
    }
}
