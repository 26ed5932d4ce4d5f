//! Analytic stand-in models for tests, calibration and bridge checks.

use super::{check_dims, Capabilities, Logits, ModelUnderTest};
use crate::render::Image;
use crate::{Error, Result};

/// Ignores its input and always returns the same logits.
#[derive(Clone, Debug)]
pub struct ConstantModel {
    pub logits: Vec<f64>,
}

impl ModelUnderTest for ConstantModel {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            gradients: true,
            activations: false,
        }
    }

    fn predict(&self, _image: &Image) -> Result<Logits> {
        Ok(Logits(self.logits.clone()))
    }

    fn input_gradient(&self, image: &Image, _target: usize) -> Result<Vec<f64>> {
        Ok(vec![0.0; image.data.len()])
    }
}

/// `logit_c = w_c · x + b_c` over raw HWC pixel values.
#[derive(Clone, Debug)]
pub struct LinearModel {
    pub height: usize,
    pub width: usize,
    /// `[classes][h*w*3]`
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl ModelUnderTest for LinearModel {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            gradients: true,
            activations: false,
        }
    }

    fn input_dims(&self) -> Option<(usize, usize)> {
        Some((self.height, self.width))
    }

    fn predict(&self, image: &Image) -> Result<Logits> {
        check_dims(self, image)?;
        Ok(Logits(
            self.weights
                .iter()
                .zip(&self.bias)
                .map(|(w, b)| {
                    b + w
                        .iter()
                        .zip(&image.data)
                        .map(|(w, &x)| w * x as f64)
                        .sum::<f64>()
                })
                .collect(),
        ))
    }

    fn input_gradient(&self, image: &Image, target: usize) -> Result<Vec<f64>> {
        check_dims(self, image)?;
        self.weights
            .get(target)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("target class {target} out of range")))
    }
}
