//! The classifier under test: a capability-flagged trait, the built-in
//! reference CNN with its trainer, and a client for external models.

pub mod cnn;
pub mod stubs;
pub mod train;
pub mod weights;
pub mod wire;

use serde::{Deserialize, Serialize};

use crate::render::Image;
use crate::{Error, Result};

pub use cnn::ReferenceCnn;
pub use stubs::{ConstantModel, LinearModel};
pub use train::{train, Augment, TrainConfig, TrainLog, TrainingData};

/// Pre-softmax class scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits(pub Vec<f64>);

impl Logits {
    /// Index of the largest logit; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub gradients: bool,
    pub activations: bool,
}

/// Last-layer convolutional feature maps and the target logit's gradient
/// with respect to them, both `channels × height × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMaps {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub activations: Vec<f64>,
    pub gradients: Vec<f64>,
}

/// The model being explained. Gradients are with respect to raw pixel
/// values in [0, 1], laid out like [`Image::data`].
pub trait ModelUnderTest: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    /// Expected `(height, width)`, if the model is resolution-specific.
    fn input_dims(&self) -> Option<(usize, usize)> {
        None
    }

    fn predict(&self, image: &Image) -> Result<Logits>;

    fn input_gradient(&self, _image: &Image, _target: usize) -> Result<Vec<f64>> {
        Err(Error::UnsupportedCapability("gradients"))
    }

    fn last_conv_activations_and_grads(
        &self,
        _image: &Image,
        _target: usize,
    ) -> Result<FeatureMaps> {
        Err(Error::UnsupportedCapability("activations"))
    }
}

impl<M: ModelUnderTest + ?Sized> ModelUnderTest for &M {
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn input_dims(&self) -> Option<(usize, usize)> {
        (**self).input_dims()
    }
    fn predict(&self, image: &Image) -> Result<Logits> {
        (**self).predict(image)
    }
    fn input_gradient(&self, image: &Image, target: usize) -> Result<Vec<f64>> {
        (**self).input_gradient(image, target)
    }
    fn last_conv_activations_and_grads(&self, image: &Image, target: usize) -> Result<FeatureMaps> {
        (**self).last_conv_activations_and_grads(image, target)
    }
}

pub(crate) fn check_dims(model: &dyn ModelUnderTest, image: &Image) -> Result<()> {
    match model.input_dims() {
        Some(expected) if expected != image.dims() => Err(Error::DimensionMismatch {
            expected,
            got: image.dims(),
        }),
        _ => Ok(()),
    }
}

/// Mean softmax cross-entropy over a set of equally likely targets, and its
/// gradient with respect to the logits: `softmax - mean(one_hot)`.
pub fn multi_target_cross_entropy(logits: &[f64], targets: &[usize]) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    let log_z = max + sum.ln();
    let share = 1.0 / targets.len() as f64;
    let loss = targets.iter().map(|&t| log_z - logits[t]).sum::<f64>() * share;
    let mut grad: Vec<f64> = logits.iter().map(|v| (v - log_z).exp()).collect();
    for &t in targets {
        grad[t] -= share;
    }
    (loss, grad)
}
