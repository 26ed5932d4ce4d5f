//! Local surrogate explanation over a fixed segment grid, reduced to a
//! binary mask of the highest-weighted segments.

use rand::Rng;
use rayon::prelude::*;

use super::{Explanation, LimeConfig, MethodId};
use crate::model::ModelUnderTest;
use crate::render::Image;
use crate::{seed, Error, Result};

const FILL: f32 = 0.5;

/// Segment index of every pixel for a `grid × grid` partition.
pub fn grid_segments(height: usize, width: usize, grid: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            out.push((y * grid / height) * grid + x * grid / width);
        }
    }
    out
}

/// On/off vectors; the first sample is the unperturbed image.
pub fn perturbations(cfg: &LimeConfig, n_segments: usize) -> Vec<Vec<bool>> {
    let mut rng = seed::rng(cfg.seed, "lime", 0);
    (0..cfg.n_perturb)
        .map(|i| {
            if i == 0 {
                vec![true; n_segments]
            } else {
                (0..n_segments).map(|_| rng.random_bool(0.5)).collect()
            }
        })
        .collect()
}

/// `sqrt(exp(-d²/w²))` over the cosine distance to the all-on vector.
fn kernel(z: &[bool], width: f64) -> f64 {
    let on = z.iter().filter(|&&b| b).count() as f64;
    let d = if on == 0.0 {
        1.0
    } else {
        1.0 - on / (on.sqrt() * (z.len() as f64).sqrt())
    };
    (-(d * d) / (width * width)).exp().sqrt()
}

/// Solves `A x = b` for symmetric positive-definite `A` (row-major `n×n`).
pub(crate) fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let d = a[i * n + i] - s;
                if d <= 0.0 || !d.is_finite() {
                    return None;
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    Some(x)
}

/// Weighted ridge regression with an unpenalized intercept. Returns the
/// per-feature coefficients.
pub fn weighted_ridge(
    z: &[Vec<bool>],
    y: &[f64],
    weights: &[f64],
    lambda: f64,
) -> Result<Vec<f64>> {
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::InvalidArgument(
            "ridge lambda must be positive".into(),
        ));
    }
    let n = z.first().map_or(0, Vec::len);
    let wsum: f64 = weights.iter().sum();
    let xm: Vec<f64> = (0..n)
        .map(|j| {
            z.iter()
                .zip(weights)
                .map(|(r, w)| w * r[j] as u8 as f64)
                .sum::<f64>()
                / wsum
        })
        .collect();
    let ym = y.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / wsum;
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    let mut xc = vec![0.0; n];
    for ((row, &yi), &wi) in z.iter().zip(y).zip(weights) {
        for j in 0..n {
            xc[j] = row[j] as u8 as f64 - xm[j];
        }
        for i in 0..n {
            b[i] += wi * xc[i] * (yi - ym);
            for j in 0..=i {
                a[i * n + j] += wi * xc[i] * xc[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            a[j * n + i] = a[i * n + j];
        }
        a[i * n + i] += lambda;
    }
    cholesky_solve(&a, &b, n)
        .ok_or_else(|| Error::Format("ridge system not positive definite".into()))
}

/// Surrogate coefficients per segment for `target`.
pub fn lime_coefficients(
    model: &dyn ModelUnderTest,
    image: &Image,
    target: usize,
    cfg: &LimeConfig,
) -> Result<Vec<f64>> {
    if cfg.ridge_lambda.is_nan() || cfg.ridge_lambda <= 0.0 {
        return Err(Error::InvalidArgument(
            "ridge lambda must be positive".into(),
        ));
    }
    if cfg.segment_grid == 0 || cfg.n_perturb == 0 {
        return Err(Error::InvalidArgument(
            "LIME grid and sample count must be positive".into(),
        ));
    }
    let grid = cfg.segment_grid.min(image.height).min(image.width);
    let segs = grid_segments(image.height, image.width, grid);
    let n_segments = grid * grid;
    let samples = perturbations(cfg, n_segments);
    let y = samples
        .par_iter()
        .map(|z| {
            let mut img = image.clone();
            for (p, &s) in segs.iter().enumerate() {
                if !z[s] {
                    img.data[p * 3..p * 3 + 3].fill(FILL);
                }
            }
            Ok(model.predict(&img)?.get(target))
        })
        .collect::<Result<Vec<f64>>>()?;
    let weights: Vec<f64> = samples
        .iter()
        .map(|z| kernel(z, cfg.kernel_width))
        .collect();
    weighted_ridge(&samples, &y, &weights, cfg.ridge_lambda)
}

pub fn lime_binary(
    model: &dyn ModelUnderTest,
    image: &Image,
    target: usize,
    cfg: &LimeConfig,
) -> Result<Explanation> {
    let coef = lime_coefficients(model, image, target, cfg)?;
    let grid = cfg.segment_grid.min(image.height).min(image.width);
    let mut order: Vec<usize> = (0..coef.len()).collect();
    // stable sort keeps lower segment indices first among ties
    order.sort_by(|&a, &b| coef[b].total_cmp(&coef[a]));
    let mut chosen = vec![false; coef.len()];
    for &s in order.iter().take(cfg.top_k) {
        chosen[s] = true;
    }
    let mask = grid_segments(image.height, image.width, grid)
        .into_iter()
        .map(|s| chosen[s])
        .collect();
    Ok(Explanation::binary(
        image.width,
        image.height,
        mask,
        MethodId::Lime,
        target,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Capabilities, Logits};

    /// Reads only the mean intensity of the top-left grid segment.
    struct CornerReader {
        grid: usize,
    }

    impl ModelUnderTest for CornerReader {
        fn capabilities(&self) -> Capabilities {
            Capabilities::default()
        }
        fn predict(&self, image: &Image) -> Result<Logits> {
            let (sh, sw) = (image.height / self.grid, image.width / self.grid);
            let mut s = 0.0;
            for y in 0..sh {
                for x in 0..sw {
                    s += (0..3).map(|c| image.get(x, y, c) as f64).sum::<f64>();
                }
            }
            Ok(Logits(vec![s / (sh * sw * 3) as f64]))
        }
    }

    fn textured(h: usize, w: usize) -> Image {
        Image::from_data(
            w,
            h,
            (0..h * w * 3)
                .map(|i| 0.9 - ((i * 31) % 17) as f32 / 100.0)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn corner_reader_has_largest_coefficient_at_segment_zero() {
        let cfg = LimeConfig::default();
        let img = textured(32, 32);
        let coef = lime_coefficients(&CornerReader { grid: 8 }, &img, 0, &cfg).unwrap();
        let (best, _) =
            coef.iter()
                .enumerate()
                .fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        assert_eq!(best, 0);
        assert!(coef[1..].iter().all(|&v| v < coef[0]));
        let e = lime_binary(
            &CornerReader { grid: 8 },
            &img,
            0,
            &LimeConfig { top_k: 1, ..cfg },
        )
        .unwrap();
        let m = e.as_mask().unwrap();
        assert_eq!(m.iter().filter(|&&b| b).count(), 16);
        assert!(m[0] && m[3 * 32 + 3] && !m[4]);
    }

    #[test]
    fn all_segments_give_full_mask() {
        let cfg = LimeConfig {
            n_perturb: 50,
            top_k: 64,
            ..Default::default()
        };
        let e = lime_binary(&CornerReader { grid: 8 }, &textured(16, 16), 0, &cfg).unwrap();
        assert!(e.as_mask().unwrap().iter().all(|&b| b));
    }

    #[test]
    fn masks_are_unions_of_segments_and_deterministic() {
        let cfg = LimeConfig {
            n_perturb: 200,
            top_k: 5,
            ..Default::default()
        };
        let img = textured(24, 24);
        let a = lime_binary(&CornerReader { grid: 8 }, &img, 0, &cfg).unwrap();
        assert_eq!(
            a,
            lime_binary(&CornerReader { grid: 8 }, &img, 0, &cfg).unwrap()
        );
        let segs = grid_segments(24, 24, 8);
        let m = a.as_mask().unwrap();
        for (p, &s) in segs.iter().enumerate() {
            let first = segs.iter().position(|&t| t == s).unwrap();
            assert_eq!(m[p], m[first]);
        }
    }

    #[test]
    fn nonpositive_lambda_is_rejected() {
        let cfg = LimeConfig {
            ridge_lambda: 0.0,
            ..Default::default()
        };
        assert!(lime_binary(&CornerReader { grid: 8 }, &textured(8, 8), 0, &cfg).is_err());
        assert!(weighted_ridge(&[vec![true]], &[1.0], &[1.0], -1.0).is_err());
    }

    #[test]
    fn ridge_recovers_linear_coefficients() {
        // y = 2 + 3 z0 - z1, tiny lambda, uniform weights
        let mut z = Vec::new();
        let mut y = Vec::new();
        for a in [false, true] {
            for b in [false, true] {
                for _ in 0..5 {
                    z.push(vec![a, b]);
                    y.push(2.0 + 3.0 * a as u8 as f64 - b as u8 as f64);
                }
            }
        }
        let coef = weighted_ridge(&z, &y, &vec![1.0; z.len()], 1e-9).unwrap();
        assert!((coef[0] - 3.0).abs() < 1e-6 && (coef[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let x = [1.0, -2.0, 0.5];
        let b: Vec<f64> = (0..3)
            .map(|i| (0..3).map(|j| a[i * 3 + j] * x[j]).sum())
            .collect();
        let got = cholesky_solve(&a, &b, 3).unwrap();
        for i in 0..3 {
            assert!((got[i] - x[i]).abs() < 1e-12);
        }
        assert!(cholesky_solve(&[0.0], &[1.0], 1).is_none());
    }
}
