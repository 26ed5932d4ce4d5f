//! Gradient-based attributions: Input×Gradient and Integrated Gradients.

use super::{channel_sum, Baseline, Explanation, IgConfig, MethodId};
use crate::model::ModelUnderTest;
use crate::render::Image;
use crate::Result;

fn require_gradients(model: &dyn ModelUnderTest) -> Result<()> {
    if model.capabilities().gradients {
        Ok(())
    } else {
        Err(crate::Error::UnsupportedCapability("gradients"))
    }
}

pub fn input_x_gradient(
    model: &dyn ModelUnderTest,
    image: &Image,
    target: usize,
) -> Result<Explanation> {
    require_gradients(model)?;
    let grad = model.input_gradient(image, target)?;
    let map = channel_sum(
        grad.iter().zip(&image.data).map(|(g, &x)| g * x as f64),
        image.pixels(),
    );
    Ok(Explanation::attribution(
        image.width,
        image.height,
        map,
        MethodId::Ixg,
        target,
    ))
}

pub fn baseline_image(image: &Image, baseline: Baseline) -> Image {
    match baseline {
        Baseline::Black => Image::new(image.width, image.height),
        Baseline::Constant(v) => Image::filled(image.width, image.height, v),
    }
}

/// Midpoint Riemann sum of the gradient along the straight path from the
/// baseline, times `image - baseline`, summed over channels. With `abs`
/// the channel-summed map is replaced by its absolute value.
pub fn integrated_gradients(
    model: &dyn ModelUnderTest,
    image: &Image,
    target: usize,
    cfg: &IgConfig,
    abs: bool,
) -> Result<Explanation> {
    require_gradients(model)?;
    let base = baseline_image(image, cfg.baseline);
    let delta: Vec<f64> = image
        .data
        .iter()
        .zip(&base.data)
        .map(|(&x, &b)| x as f64 - b as f64)
        .collect();
    let mut avg = vec![0.0; image.data.len()];
    let mut point = Image::new(image.width, image.height);
    for k in 0..cfg.steps {
        let alpha = (k as f64 + 0.5) / cfg.steps as f64;
        for ((p, &b), d) in point.data.iter_mut().zip(&base.data).zip(&delta) {
            *p = (b as f64 + alpha * d) as f32;
        }
        let g = model.input_gradient(&point, target)?;
        for (a, g) in avg.iter_mut().zip(g) {
            *a += g;
        }
    }
    let n = cfg.steps as f64;
    let mut map = channel_sum(
        avg.iter().zip(&delta).map(|(a, d)| a / n * d),
        image.pixels(),
    );
    let method = if abs {
        map.iter_mut().for_each(|v| *v = v.abs());
        MethodId::IgAbs
    } else {
        MethodId::Ig
    };
    Ok(Explanation::attribution(
        image.width,
        image.height,
        map,
        method,
        target,
    ))
}
