//! Randomized input sampling: the target logit averaged over random smooth
//! masks, weighted by each mask.

use rand::Rng;
use rayon::prelude::*;

use super::gradcam::upsample_bilinear;
use super::{Explanation, MethodId, RiseConfig, RiseNormalization};
use crate::model::ModelUnderTest;
use crate::render::Image;
use crate::{seed, Result};

const CHUNK: usize = 32;

/// Mask `index` of the sequence fixed by `cfg.seed`: a random binary cell
/// grid, bilinearly upsampled to one cell more than the image and cropped
/// at a random shift.
pub fn rise_mask(cfg: &RiseConfig, index: usize, height: usize, width: usize) -> Vec<f64> {
    let g = cfg.cell_grid;
    let mut rng = seed::rng(cfg.seed, "rise-mask", index as u64);
    let grid: Vec<f64> = (0..g * g)
        .map(|_| {
            if rng.random_bool(cfg.keep_prob) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let (ch, cw) = (height.div_ceil(g), width.div_ceil(g));
    let (uh, uw) = ((g + 1) * ch, (g + 1) * cw);
    let up = upsample_bilinear(&grid, g, g, uh, uw);
    let dy = rng.random_range(0..ch);
    let dx = rng.random_range(0..cw);
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        out.extend_from_slice(&up[(y + dy) * uw + dx..(y + dy) * uw + dx + width]);
    }
    out
}

pub fn rise_saliency(
    model: &dyn ModelUnderTest,
    image: &Image,
    target: usize,
    cfg: &RiseConfig,
) -> Result<Explanation> {
    let (h, w) = (image.height, image.width);
    let hw = h * w;
    // fixed chunking keeps the floating-point summation order independent
    // of the thread count
    let partials = (0..cfg.n_masks.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut sal = vec![0.0; hw];
            let mut cov = vec![0.0; hw];
            let mut masked = image.clone();
            for m in chunk * CHUNK..((chunk + 1) * CHUNK).min(cfg.n_masks) {
                let mask = rise_mask(cfg, m, h, w);
                for (p, &k) in mask.iter().enumerate() {
                    for c in 0..3 {
                        masked.data[p * 3 + c] = (image.data[p * 3 + c] as f64 * k) as f32;
                    }
                }
                let score = model.predict(&masked)?.get(target);
                for p in 0..hw {
                    sal[p] += score * mask[p];
                    cov[p] += mask[p];
                }
            }
            Ok((sal, cov))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sal = vec![0.0; hw];
    let mut cov = vec![0.0; hw];
    for (s, c) in partials {
        sal.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        cov.iter_mut().zip(c).for_each(|(a, b)| *a += b);
    }
    match cfg.normalization {
        RiseNormalization::ExpectedCoverage => {
            let z = cfg.n_masks as f64 * cfg.keep_prob;
            sal.iter_mut().for_each(|v| *v /= z);
        }
        RiseNormalization::EmpiricalCoverage => {
            for (v, c) in sal.iter_mut().zip(&cov) {
                *v = if *c > 0.0 { *v / c } else { 0.0 };
            }
        }
    }
    Ok(Explanation::attribution(w, h, sal, MethodId::Rise, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::stubs::{ConstantModel, LinearModel};

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn masks_are_in_unit_range_and_keep_about_p() {
        let cfg = RiseConfig::default();
        let mut total = 0.0;
        for m in 0..200 {
            let mask = rise_mask(&cfg, m, 64, 64);
            assert_eq!(mask.len(), 64 * 64);
            assert!(mask.iter().all(|&v| (0.0..=1.0).contains(&v)));
            total += mask.iter().sum::<f64>();
        }
        let mean = total / (200.0 * 4096.0);
        assert!((mean - 0.5).abs() < 0.03, "{mean}");
    }

    #[test]
    fn constant_model_gives_constant_map() {
        let m = ConstantModel {
            logits: vec![2.5, -1.0],
        };
        let img = Image::filled(16, 16, 0.7);
        let cfg = RiseConfig {
            n_masks: 300,
            normalization: RiseNormalization::EmpiricalCoverage,
            ..Default::default()
        };
        let e = rise_saliency(&m, &img, 0, &cfg).unwrap();
        for &v in e.as_attribution().unwrap() {
            assert!((v - 2.5).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn linear_model_matches_analytic_pattern() {
        let (h, w) = (32, 32);
        // smooth pattern: positive blob top-left, negative blob bottom-right
        let pattern = |x: f64, y: f64| {
            (-((x - 8.0).powi(2) + (y - 9.0).powi(2)) / 40.0).exp()
                - (-((x - 23.0).powi(2) + (y - 22.0).powi(2)) / 40.0).exp()
        };
        let mut wt = vec![0.0; h * w * 3];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    wt[(y * w + x) * 3 + c] = pattern(x as f64, y as f64);
                }
            }
        }
        let model = LinearModel {
            height: h,
            width: w,
            weights: vec![wt.clone()],
            bias: vec![0.0],
        };
        let img = Image::filled(w, h, 0.6);
        let e = rise_saliency(&model, &img, 0, &RiseConfig::default()).unwrap();
        let analytic: Vec<f64> = (0..h * w)
            .map(|p| (0..3).map(|c| wt[p * 3 + c] * 0.6).sum())
            .collect();
        let r = pearson(e.as_attribution().unwrap(), &analytic);
        assert!(r > 0.95, "pearson {r}");
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let m = LinearModel {
            height: 8,
            width: 8,
            weights: vec![(0..192).map(|i| (i % 5) as f64).collect()],
            bias: vec![0.0],
        };
        let img = Image::filled(8, 8, 0.3);
        let cfg = RiseConfig {
            n_masks: 100,
            cell_grid: 4,
            ..Default::default()
        };
        let a = rise_saliency(&m, &img, 0, &cfg).unwrap();
        let b = rise_saliency(&m, &img, 0, &cfg).unwrap();
        assert_eq!(a, b);
        let c = rise_saliency(&m, &img, 0, &RiseConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, c);
    }
}
