//! Grad-CAM on the model's last convolutional feature maps.

use super::{Explanation, MethodId};
use crate::model::{FeatureMaps, ModelUnderTest};
use crate::render::Image;
use crate::{Error, Result};

pub fn grad_cam(model: &dyn ModelUnderTest, image: &Image, target: usize) -> Result<Explanation> {
    if !model.capabilities().activations {
        return Err(Error::UnsupportedCapability("activations"));
    }
    let fm = model.last_conv_activations_and_grads(image, target)?;
    let map = upsample_bilinear(&cam(&fm), fm.height, fm.width, image.height, image.width);
    Ok(Explanation::attribution(
        image.width,
        image.height,
        map,
        MethodId::GradCam,
        target,
    ))
}

/// `ReLU(Σ_c α_c A_c)` at feature resolution, with `α_c` the spatial mean
/// of channel `c`'s gradient.
pub fn cam(fm: &FeatureMaps) -> Vec<f64> {
    let hw = fm.height * fm.width;
    let mut out = vec![0.0; hw];
    for c in 0..fm.channels {
        let grads = &fm.gradients[c * hw..(c + 1) * hw];
        let alpha = grads.iter().sum::<f64>() / hw as f64;
        for (o, a) in out.iter_mut().zip(&fm.activations[c * hw..(c + 1) * hw]) {
            *o += alpha * a;
        }
    }
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn upsample_bilinear(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    let coord = |d: usize, s: usize, n: usize| {
        let x = ((d as f64 + 0.5) * s as f64 / n as f64 - 0.5).clamp(0.0, (s - 1) as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(s - 1);
        (i0, i1, x - i0 as f64)
    };
    let mut out = vec![0.0; dh * dw];
    for y in 0..dh {
        let (y0, y1, fy) = coord(y, sh, dh);
        for x in 0..dw {
            let (x0, x1, fx) = coord(x, sw, dw);
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bot = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out[y * dw + x] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}
