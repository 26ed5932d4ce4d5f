//! Independent brute-force implementations the library is checked against.

use std::collections::BTreeMap;

use funnybench::explain::{integrated_gradients, IgConfig};
use funnybench::model::{ModelUnderTest, ReferenceCnn};
use funnybench::render::{Image, Mask};
use funnybench::scenegen::{ClassSpace, PartSet, PartSlot};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Enumerates all 32 slot masks directly on the class tuples.
pub fn sufficient_sets(space: &ClassSpace, class: usize) -> Vec<Vec<u16>> {
    let tuple = |c: usize| space.class(c).assignment;
    let identifies = |mask: u8| {
        (0..space.len()).all(|o| {
            o == class || (0..5).any(|i| mask & (1 << i) != 0 && tuple(o)[i] != tuple(class)[i])
        })
    };
    let mut minimal: Vec<Vec<u16>> = (0u8..32)
        .filter(|&m| identifies(m))
        .filter(|&m| (0..5).all(|i| m & (1 << i) == 0 || !identifies(m & !(1 << i))))
        .map(|m| {
            (0..5u16)
                .filter(|i| m & (1 << i) != 0)
                .map(|i| i + 1)
                .collect()
        })
        .collect();
    minimal.sort_by_key(|v| (v.len(), v.clone()));
    minimal
}

pub fn as_labels(set: &PartSet) -> Vec<u16> {
    set.iter().map(PartSlot::label).collect()
}

/// Ranks by counting, then the textbook Pearson formula. `None` when either
/// side has no variance.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|x| {
                let less = v.iter().filter(|y| *y < x).count() as f64;
                let equal = v.iter().filter(|y| *y == x).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = a.len() as f64;
    let (sa, sb): (f64, f64) = (ra.iter().sum(), rb.iter().sum());
    let sab: f64 = ra.iter().zip(&rb).map(|(x, y)| x * y).sum();
    let saa: f64 = ra.iter().map(|x| x * x).sum();
    let sbb: f64 = rb.iter().map(|x| x * x).sum();
    let den = ((n * saa - sa * sa) * (n * sbb - sb * sb)).sqrt();
    (den > 0.0).then(|| (n * sab - sa * sb) / den)
}

/// Square-kernel dilation as a neighbourhood max.
pub fn dilate(mask: &Mask, k: usize) -> Vec<bool> {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let r = (k / 2) as i64;
    let mut out = vec![false; mask.bits.len()];
    for y in 0..h {
        for x in 0..w {
            let mut any = false;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (xx, yy) = (x + dx, y + dy);
                    if xx >= 0 && yy >= 0 && xx < w && yy < h {
                        any |= mask.bits[(yy * w + xx) as usize];
                    }
                }
            }
            out[(y * w + x) as usize] = any;
        }
    }
    out
}

/// Part importance by visiting every pixel and crediting each part or
/// background object within `radius` of it.
pub fn part_importance(
    labels: &[u16],
    w: usize,
    h: usize,
    attr: &[f64],
    radius: i64,
) -> BTreeMap<u16, f64> {
    let mut want: BTreeMap<u16, f64> = BTreeMap::new();
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut seen = Vec::new();
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let (xx, yy) = (x + dx, y + dy);
                    if xx >= 0 && yy >= 0 && xx < w as i64 && yy < h as i64 {
                        let l = labels[(yy * w as i64 + xx) as usize];
                        if (1..=5).contains(&l) || l >= 100 {
                            seen.push(l);
                        }
                    }
                }
            }
            seen.sort_unstable();
            seen.dedup();
            for l in seen {
                *want.entry(l).or_default() += attr[(y * w as i64 + x) as usize];
            }
        }
    }
    want
}

/// Blocky label map over background, body, parts and two objects.
pub fn blocky_labels(w: usize, h: usize, seed: u64) -> Vec<u16> {
    let pool = [0u16, 0, 0, 6, 1, 2, 3, 4, 5, 100, 101];
    (0..w * h)
        .map(|p| {
            let (x, y) = (p % w, p / w);
            let mut r = ChaCha8Rng::seed_from_u64(seed ^ ((x / 4) * 31 + (y / 4)) as u64);
            pool[r.random_range(0..pool.len())]
        })
        .collect()
}

pub fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_data(w, h, (0..h * w * 3).map(|_| rng.random::<f32>()).collect()).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Worst relative error of the analytic input gradient against central
/// differences over `probes` pixels. Probes whose stencil crosses a ReLU or
/// max-pool switch are redrawn, since the difference quotient is meaningless
/// there.
pub fn input_gradient_error(
    net: &ReferenceCnn,
    img: &Image,
    target: usize,
    probes: usize,
    seed: u64,
) -> f64 {
    let base: Vec<f64> = img.data.iter().map(|&v| v as f64).collect();
    let grad = net.input_gradient(img, target).unwrap();
    let logit = |x: &[f64]| net.forward(&net.normalize(x.iter().copied())).logits[target];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-4;
    let (mut checked, mut tries, mut worst) = (0, 0, 0.0f64);
    while checked < probes {
        tries += 1;
        assert!(tries < 100 * probes, "too many kinks");
        let i = rng.random_range(0..base.len());
        let eval = |d: f64| {
            let mut x = base.clone();
            x[i] += d;
            logit(&x)
        };
        let (fp, f0, fm) = (eval(h), eval(0.0), eval(-h));
        if rel_err((fp - f0) / h, (f0 - fm) / h) > 1e-6 {
            continue;
        }
        worst = worst.max(rel_err((fp - fm) / (2.0 * h), grad[i]));
        checked += 1;
    }
    worst
}

/// Worst relative error of the last-conv feature gradient against central
/// differences through an independently evaluated dense head. Also checks
/// the reported activations against a plain forward pass.
pub fn feature_gradient_error(
    net: &ReferenceCnn,
    img: &Image,
    target: usize,
    probes: usize,
    seed: u64,
) -> f64 {
    let fm = net.last_conv_activations_and_grads(img, target).unwrap();
    let x = net.normalize(img.data.iter().map(|&v| v as f64));
    assert_eq!(fm.activations, net.forward(&x).features);
    let k = fm.activations.len();
    let row = &net.params.fc_w[target * k..(target + 1) * k];
    let head =
        |f: &[f64]| net.params.fc_b[target] + row.iter().zip(f).map(|(w, v)| w * v).sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-3;
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let i = rng.random_range(0..k);
        let mut up = fm.activations.clone();
        up[i] += h;
        let mut down = fm.activations.clone();
        down[i] -= h;
        worst = worst.max(rel_err(
            (head(&up) - head(&down)) / (2.0 * h),
            fm.gradients[i],
        ));
    }
    worst
}

/// |Σ IG − (f(x) − f(black))| / |f(x) − f(black)|.
pub fn ig_completeness_error(
    model: &dyn ModelUnderTest,
    img: &Image,
    target: usize,
    steps: usize,
) -> f64 {
    let cfg = IgConfig {
        steps,
        ..Default::default()
    };
    let expl = integrated_gradients(model, img, target, &cfg, false).unwrap();
    let total: f64 = expl.as_attribution().unwrap().iter().sum();
    let black = Image::new(img.width, img.height);
    let diff = model.predict(img).unwrap().get(target) - model.predict(&black).unwrap().get(target);
    (total - diff).abs() / diff.abs()
}
