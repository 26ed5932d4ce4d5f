//! Small reference CNN with hand-written backpropagation.
//!
//! conv3x3(16) → ReLU → maxpool2 → conv3x3(32) → ReLU → maxpool2 → dense.
//! Convolutions are lowered to GEMM via im2col. Inputs are normalized with
//! stored per-channel statistics, and all gradients are chained back to raw
//! pixel space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{check_dims, Capabilities, FeatureMaps, Logits, ModelUnderTest};
use crate::render::Image;
use crate::{Error, Result};

pub const CONV1_FILTERS: usize = 16;
pub const CONV2_FILTERS: usize = 32;
const KSIZE: usize = 9;

/// Trainable tensors, all row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnParams {
    /// `[16, 3*9]`
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    /// `[32, 16*9]`
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    /// `[classes, 32*(h/4)*(w/4)]`
    pub fc_w: Vec<f64>,
    pub fc_b: Vec<f64>,
}

impl CnnParams {
    pub fn zeros_like(other: &CnnParams) -> CnnParams {
        CnnParams {
            conv1_w: vec![0.0; other.conv1_w.len()],
            conv1_b: vec![0.0; other.conv1_b.len()],
            conv2_w: vec![0.0; other.conv2_w.len()],
            conv2_b: vec![0.0; other.conv2_b.len()],
            fc_w: vec![0.0; other.fc_w.len()],
            fc_b: vec![0.0; other.fc_b.len()],
        }
    }

    pub const NAMES: [&'static str; 6] =
        ["conv1.w", "conv1.b", "conv2.w", "conv2.b", "fc.w", "fc.b"];

    pub fn tensors(&self) -> [&Vec<f64>; 6] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc_w,
            &self.fc_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc_w,
            &mut self.fc_b,
        ]
    }

    pub fn fill(&mut self, v: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = v);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceCnn {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub params: CnnParams,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Intermediate values of one forward pass, kept for backpropagation.
pub struct Trace {
    col1: Vec<f64>,
    z1: Vec<f64>,
    idx1: Vec<u32>,
    col2: Vec<f64>,
    z2: Vec<f64>,
    idx2: Vec<u32>,
    /// Output of the second pooling layer, `32 × h/4 × w/4`.
    pub features: Vec<f64>,
    pub logits: Vec<f64>,
}

pub struct Backward {
    /// Gradient with respect to raw pixels, HWC.
    pub input: Option<Vec<f64>>,
    /// Gradient with respect to [`Trace::features`].
    pub features: Vec<f64>,
}

/// `C (+)= A·B` with optional transposes, through `matrixmultiply`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: slice lengths cover the strided extents checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 3×3, stride 1, zero padding 1. Output `[c*9, h*w]`.
fn im2col(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut col = vec![0.0; c * KSIZE * hw];
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ch * KSIZE + ky * 3 + kx) * hw;
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            col[row + y * w + x] = input[ch * hw + sy as usize * w + sx as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; c * hw];
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ch * KSIZE + ky * 3 + kx) * hw;
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            out[ch * hw + sy as usize * w + sx as usize] += col[row + y * w + x];
                        }
                    }
                }
            }
        }
    }
    out
}

/// ReLU followed by 2×2 max pooling; returns pooled values and argmax indices.
fn relu_pool(z: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<u32>) {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = vec![0.0; c * ph * pw];
    let mut idx = vec![0u32; c * ph * pw];
    for ch in 0..c {
        for y in 0..ph {
            for x in 0..pw {
                let mut best_i = ch * h * w + 2 * y * w + 2 * x;
                let mut best = z[best_i].max(0.0);
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = ch * h * w + (2 * y + dy) * w + 2 * x + dx;
                    let v = z[i].max(0.0);
                    if v > best {
                        best = v;
                        best_i = i;
                    }
                }
                let o = ch * ph * pw + y * pw + x;
                out[o] = best;
                idx[o] = best_i as u32;
            }
        }
    }
    (out, idx)
}

fn unpool_relu(grad: &[f64], idx: &[u32], z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    for (g, &i) in grad.iter().zip(idx) {
        if z[i as usize] > 0.0 {
            out[i as usize] += g;
        }
    }
    out
}

impl ReferenceCnn {
    /// He-initialized network for `height × width` inputs (multiples of 4).
    pub fn new(height: usize, width: usize, num_classes: usize, seed: u64) -> Result<ReferenceCnn> {
        let mut net = Self::zeros(height, width, num_classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |t: &mut Vec<f64>, fan_in: usize, gain: f64| {
            let dist = Normal::new(0.0, (gain / fan_in as f64).sqrt()).unwrap();
            t.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
        };
        init(&mut net.params.conv1_w, 3 * KSIZE, 2.0);
        init(&mut net.params.conv2_w, CONV1_FILTERS * KSIZE, 2.0);
        let feat = net.feature_len();
        init(&mut net.params.fc_w, feat, 1.0);
        Ok(net)
    }

    pub fn zeros(height: usize, width: usize, num_classes: usize) -> Result<ReferenceCnn> {
        if height == 0
            || width == 0
            || !height.is_multiple_of(4)
            || !width.is_multiple_of(4)
            || num_classes == 0
        {
            return Err(Error::InvalidArgument(format!(
                "unsupported network shape {height}x{width} -> {num_classes}"
            )));
        }
        let feat = CONV2_FILTERS * (height / 4) * (width / 4);
        Ok(ReferenceCnn {
            height,
            width,
            num_classes,
            params: CnnParams {
                conv1_w: vec![0.0; CONV1_FILTERS * 3 * KSIZE],
                conv1_b: vec![0.0; CONV1_FILTERS],
                conv2_w: vec![0.0; CONV2_FILTERS * CONV1_FILTERS * KSIZE],
                conv2_b: vec![0.0; CONV2_FILTERS],
                fc_w: vec![0.0; num_classes * feat],
                fc_b: vec![0.0; num_classes],
            },
            mean: [0.0; 3],
            std: [1.0; 3],
        })
    }

    pub fn feature_len(&self) -> usize {
        CONV2_FILTERS * (self.height / 4) * (self.width / 4)
    }

    /// Shape of the last convolutional feature maps.
    pub fn feature_shape(&self) -> (usize, usize, usize) {
        (CONV2_FILTERS, self.height / 4, self.width / 4)
    }

    /// HWC raw pixels to normalized CHW.
    pub fn normalize(&self, hwc: impl Iterator<Item = f64>) -> Vec<f64> {
        let hw = self.height * self.width;
        let mut out = vec![0.0; 3 * hw];
        for (i, v) in hwc.enumerate() {
            let (p, c) = (i / 3, i % 3);
            out[c * hw + p] = (v - self.mean[c]) / self.std[c];
        }
        out
    }

    pub fn forward(&self, x: &[f64]) -> Trace {
        let (h, w) = (self.height, self.width);
        let p = &self.params;

        let col1 = im2col(x, 3, h, w);
        let mut z1 = vec![0.0; CONV1_FILTERS * h * w];
        for (f, row) in z1.chunks_exact_mut(h * w).enumerate() {
            row.fill(p.conv1_b[f]);
        }
        gemm(
            CONV1_FILTERS,
            3 * KSIZE,
            h * w,
            &p.conv1_w,
            false,
            &col1,
            false,
            &mut z1,
            1.0,
        );
        let (p1, idx1) = relu_pool(&z1, CONV1_FILTERS, h, w);

        let (h2, w2) = (h / 2, w / 2);
        let col2 = im2col(&p1, CONV1_FILTERS, h2, w2);
        let mut z2 = vec![0.0; CONV2_FILTERS * h2 * w2];
        for (f, row) in z2.chunks_exact_mut(h2 * w2).enumerate() {
            row.fill(p.conv2_b[f]);
        }
        gemm(
            CONV2_FILTERS,
            CONV1_FILTERS * KSIZE,
            h2 * w2,
            &p.conv2_w,
            false,
            &col2,
            false,
            &mut z2,
            1.0,
        );
        let (features, idx2) = relu_pool(&z2, CONV2_FILTERS, h2, w2);

        let feat = features.len();
        let mut logits = p.fc_b.clone();
        gemm(
            self.num_classes,
            feat,
            1,
            &p.fc_w,
            false,
            &features,
            false,
            &mut logits,
            1.0,
        );

        Trace {
            col1,
            z1,
            idx1,
            col2,
            z2,
            idx2,
            features,
            logits,
        }
    }

    /// Backpropagates `dlogits`. Parameter gradients are accumulated into
    /// `grads` when given; the raw-pixel input gradient is computed when
    /// `want_input` is set.
    pub fn backward(
        &self,
        trace: &Trace,
        dlogits: &[f64],
        grads: Option<&mut CnnParams>,
        want_input: bool,
    ) -> Backward {
        let (h, w) = (self.height, self.width);
        let (h2, w2) = (h / 2, w / 2);
        let p = &self.params;
        let feat = trace.features.len();

        let mut dfeat = vec![0.0; feat];
        gemm(
            feat,
            self.num_classes,
            1,
            &p.fc_w,
            true,
            dlogits,
            false,
            &mut dfeat,
            0.0,
        );

        let dz2 = unpool_relu(&dfeat, &trace.idx2, &trace.z2);
        let mut dcol2 = vec![0.0; CONV1_FILTERS * KSIZE * h2 * w2];
        gemm(
            CONV1_FILTERS * KSIZE,
            CONV2_FILTERS,
            h2 * w2,
            &p.conv2_w,
            true,
            &dz2,
            false,
            &mut dcol2,
            0.0,
        );
        let dp1 = col2im(&dcol2, CONV1_FILTERS, h2, w2);
        let dz1 = unpool_relu(&dp1, &trace.idx1, &trace.z1);

        if let Some(g) = grads {
            gemm(
                self.num_classes,
                1,
                feat,
                dlogits,
                false,
                &trace.features,
                false,
                &mut g.fc_w,
                1.0,
            );
            for (b, d) in g.fc_b.iter_mut().zip(dlogits) {
                *b += d;
            }
            gemm(
                CONV2_FILTERS,
                h2 * w2,
                CONV1_FILTERS * KSIZE,
                &dz2,
                false,
                &trace.col2,
                true,
                &mut g.conv2_w,
                1.0,
            );
            for (f, row) in dz2.chunks_exact(h2 * w2).enumerate() {
                g.conv2_b[f] += row.iter().sum::<f64>();
            }
            gemm(
                CONV1_FILTERS,
                h * w,
                3 * KSIZE,
                &dz1,
                false,
                &trace.col1,
                true,
                &mut g.conv1_w,
                1.0,
            );
            for (f, row) in dz1.chunks_exact(h * w).enumerate() {
                g.conv1_b[f] += row.iter().sum::<f64>();
            }
        }

        let input = want_input.then(|| {
            let mut dcol1 = vec![0.0; 3 * KSIZE * h * w];
            gemm(
                3 * KSIZE,
                CONV1_FILTERS,
                h * w,
                &p.conv1_w,
                true,
                &dz1,
                false,
                &mut dcol1,
                0.0,
            );
            let dx = col2im(&dcol1, 3, h, w);
            let hw = h * w;
            let mut raw = vec![0.0; 3 * hw];
            for pix in 0..hw {
                for c in 0..3 {
                    raw[pix * 3 + c] = dx[c * hw + pix] / self.std[c];
                }
            }
            raw
        });

        Backward {
            input,
            features: dfeat,
        }
    }

    fn trace_image(&self, image: &Image) -> Result<Trace> {
        check_dims(self, image)?;
        Ok(self.forward(&self.normalize(image.data.iter().map(|&v| v as f64))))
    }

    fn one_hot(&self, target: usize) -> Result<Vec<f64>> {
        if target >= self.num_classes {
            return Err(Error::InvalidArgument(format!(
                "target class {target} out of range"
            )));
        }
        let mut d = vec![0.0; self.num_classes];
        d[target] = 1.0;
        Ok(d)
    }
}

impl ModelUnderTest for ReferenceCnn {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            gradients: true,
            activations: true,
        }
    }

    fn input_dims(&self) -> Option<(usize, usize)> {
        Some((self.height, self.width))
    }

    fn predict(&self, image: &Image) -> Result<Logits> {
        Ok(Logits(self.trace_image(image)?.logits))
    }

    fn input_gradient(&self, image: &Image, target: usize) -> Result<Vec<f64>> {
        let trace = self.trace_image(image)?;
        let d = self.one_hot(target)?;
        Ok(self
            .backward(&trace, &d, None, true)
            .input
            .expect("input gradient requested"))
    }

    fn last_conv_activations_and_grads(&self, image: &Image, target: usize) -> Result<FeatureMaps> {
        let trace = self.trace_image(image)?;
        let d = self.one_hot(target)?;
        let back = self.backward(&trace, &d, None, false);
        let (channels, height, width) = self.feature_shape();
        Ok(FeatureMaps {
            channels,
            height,
            width,
            activations: trace.features,
            gradients: back.features,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image {
            width: w,
            height: h,
            data: (0..h * w * 3).map(|_| rng.random::<f32>()).collect(),
        }
    }

    fn logit_at(net: &ReferenceCnn, data: &[f64], target: usize) -> f64 {
        net.forward(&net.normalize(data.iter().copied())).logits[target]
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn zero_weights_give_bias_logits_and_zero_gradients() {
        let mut net = ReferenceCnn::zeros(16, 16, 5).unwrap();
        net.params.fc_b = vec![0.5, -1.0, 2.0, 0.0, 3.0];
        let img = random_image(16, 16, 1);
        assert_eq!(net.predict(&img).unwrap().0, net.params.fc_b);
        assert!(net
            .input_gradient(&img, 2)
            .unwrap()
            .iter()
            .all(|&g| g == 0.0));
        let fm = net.last_conv_activations_and_grads(&img, 2).unwrap();
        assert!(fm.gradients.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn feature_shape_at_default_resolution() {
        let net = ReferenceCnn::new(64, 64, 50, 0).unwrap();
        let fm = net
            .last_conv_activations_and_grads(&random_image(64, 64, 0), 3)
            .unwrap();
        assert_eq!((fm.channels, fm.height, fm.width), (32, 16, 16));
        assert_eq!(fm.activations.len(), 32 * 16 * 16);
        assert_eq!(fm.gradients.len(), fm.activations.len());
    }

    #[test]
    fn predict_is_pure_and_checks_dims() {
        let net = ReferenceCnn::new(16, 16, 4, 3).unwrap();
        let img = random_image(16, 16, 2);
        assert_eq!(net.predict(&img).unwrap(), net.predict(&img).unwrap());
        assert!(matches!(
            net.predict(&random_image(20, 16, 2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn input_gradient_matches_central_differences() {
        let mut net = ReferenceCnn::new(16, 16, 6, 11).unwrap();
        net.mean = [0.4, 0.5, 0.6];
        net.std = [0.2, 0.25, 0.3];
        let img = random_image(16, 16, 4);
        let base: Vec<f64> = img.data.iter().map(|&v| v as f64).collect();
        let grad = net.input_gradient(&img, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-3;
        let f0 = logit_at(&net, &base, 2);
        let (mut checked, mut kinked) = (0, 0);
        while checked < 50 {
            let i = rng.random_range(0..base.len());
            let mut up = base.clone();
            up[i] += h;
            let mut dn = base.clone();
            dn[i] -= h;
            let (fu, fl) = (logit_at(&net, &up, 2), logit_at(&net, &dn, 2));
            // the network is piecewise linear: unequal one-sided slopes mean
            // a ReLU or pooling switch lies inside the stencil
            if rel_err((fu - f0) / h, (f0 - fl) / h) > 1e-6 {
                kinked += 1;
                assert!(kinked < 50, "too many probes straddle kinks");
                continue;
            }
            let fd = (fu - fl) / (2.0 * h);
            assert!(
                rel_err(fd, grad[i]) < 1e-3,
                "pixel {i}: fd {fd} vs {}",
                grad[i]
            );
            checked += 1;
        }
    }

    #[test]
    fn parameter_gradients_match_central_differences() {
        let net = ReferenceCnn::new(8, 8, 3, 21).unwrap();
        let img = random_image(8, 8, 5);
        let x = net.normalize(img.data.iter().map(|&v| v as f64));
        let trace = net.forward(&x);
        let d = vec![0.3, -1.0, 0.7];
        let mut grads = CnnParams::zeros_like(&net.params);
        net.backward(&trace, &d, Some(&mut grads), false);
        let objective = |n: &ReferenceCnn| {
            n.forward(&x)
                .logits
                .iter()
                .zip(&d)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 0..6 {
            for _ in 0..8 {
                let len = net.params.tensors()[t].len();
                let i = rng.random_range(0..len);
                let h = 1e-5;
                let mut up = net.clone();
                up.params.tensors_mut()[t][i] += h;
                let mut dn = net.clone();
                dn.params.tensors_mut()[t][i] -= h;
                let fd = (objective(&up) - objective(&dn)) / (2.0 * h);
                let an = grads.tensors()[t][i];
                assert!(
                    (fd - an).abs() < 1e-6 * (1.0 + an.abs()),
                    "{} [{i}]: {fd} vs {an}",
                    CnnParams::NAMES[t]
                );
            }
        }
    }

    #[test]
    fn activation_gradients_match_central_differences() {
        // perturb the pooled features directly and re-run the dense head
        let net = ReferenceCnn::new(16, 16, 5, 8).unwrap();
        let img = random_image(16, 16, 6);
        let fm = net.last_conv_activations_and_grads(&img, 4).unwrap();
        let head = |f: &[f64]| {
            let row = &net.params.fc_w[4 * f.len()..5 * f.len()];
            net.params.fc_b[4] + row.iter().zip(f).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let i = rng.random_range(0..fm.activations.len());
            let mut up = fm.activations.clone();
            up[i] += 1e-3;
            let mut dn = fm.activations.clone();
            dn[i] -= 1e-3;
            let fd = (head(&up) - head(&dn)) / 2e-3;
            assert!(rel_err(fd, fm.gradients[i]) < 1e-3);
        }
    }
}
