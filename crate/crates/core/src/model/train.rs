//! Mini-batch SGD training of the reference CNN with the multi-label scheme:
//! a sample with missing parts is scored against every class consistent
//! with its remaining parts, each with equal weight.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cnn::{CnnParams, ReferenceCnn};
use super::{multi_target_cross_entropy, ModelUnderTest};
use rayon::prelude::*;

use crate::dataset::{DatasetManifest, Sample};
use crate::render::{render_scene, Image};
use crate::seed;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epoch at which the learning rate is multiplied by 0.1; defaults to
    /// half the epochs.
    pub decay_epoch: Option<usize>,
    pub seed: u64,
    #[serde(default)]
    pub augment: Augment,
}

/// On-the-fly augmentation of training images. Both transforms map the
/// generator's viewpoint distribution onto itself, so labels stay valid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augment {
    /// Mirror horizontally with probability 1/2.
    pub flip: bool,
    /// Uniform shift in `-max_shift..=max_shift` pixels on each axis; edges
    /// are clamped.
    pub max_shift: usize,
}

impl Augment {
    pub const NONE: Augment = Augment {
        flip: false,
        max_shift: 0,
    };
}

impl Default for Augment {
    fn default() -> Self {
        Augment {
            flip: true,
            max_shift: 4,
        }
    }
}

/// Raw bytes (HWC) to [0, 1] floats, mirrored and shifted.
fn transform_hwc(bytes: &[u8], h: usize, w: usize, flip: bool, dx: isize, dy: isize) -> Vec<f64> {
    let mut out = Vec::with_capacity(bytes.len());
    for y in 0..h {
        let sy = (y as isize - dy).clamp(0, h as isize - 1) as usize;
        for x in 0..w {
            let fx = if flip { w - 1 - x } else { x };
            let sx = (fx as isize - dx).clamp(0, w as isize - 1) as usize;
            let p = (sy * w + sx) * 3;
            out.extend(bytes[p..p + 3].iter().map(|&b| (b as f32 / 255.0) as f64));
        }
    }
    out
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 20,
            batch_size: 64,
            decay_epoch: None,
            seed: 0,
            augment: Augment::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.momentum >= 0.0 && self.weight_decay >= 0.0)
            || self.epochs == 0
            || self.batch_size == 0
        {
            return Err(Error::InvalidArgument(
                "training hyper-parameters must be positive".into(),
            ));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        let decay = self.decay_epoch.unwrap_or(self.epochs / 2);
        if self.epochs > 1 && epoch >= decay {
            self.learning_rate * 0.1
        } else {
            self.learning_rate
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.test_accuracy)
    }
}

/// In-memory training set: 8-bit HWC images with their target sets, plus a
/// labelled test split for per-epoch accuracy.
#[derive(Clone, Debug, Default)]
pub struct TrainingData {
    pub height: usize,
    pub width: usize,
    pub train: Vec<(Vec<u8>, Vec<usize>)>,
    pub test: Vec<(Vec<u8>, usize)>,
}

fn to_bytes(img: &Image) -> Vec<u8> {
    img.data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

fn to_image(h: usize, w: usize, bytes: &[u8]) -> Image {
    Image {
        width: w,
        height: h,
        data: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
    }
}

impl TrainingData {
    pub fn from_manifest(manifest: &DatasetManifest, root: &Path) -> Result<TrainingData> {
        let res = manifest.render_config.resolution;
        let mut data = TrainingData {
            height: res,
            width: res,
            ..Default::default()
        };
        for s in &manifest.splits.train {
            let img = manifest.load_image(root, s)?;
            data.train
                .push((to_bytes(&img), s.valid_targets.iter().copied().collect()));
        }
        for s in &manifest.splits.test {
            let img = manifest.load_image(root, s)?;
            data.test.push((to_bytes(&img), s.primary_class));
        }
        Ok(data)
    }

    /// Renders every sample of a planned manifest in memory instead of
    /// reading image files.
    pub fn render_from_manifest(manifest: &DatasetManifest) -> TrainingData {
        let res = manifest.render_config.resolution;
        let render = |s: &Sample| {
            to_bytes(&render_scene(&manifest.class_space, &s.scene, &manifest.render_config).0)
        };
        TrainingData {
            height: res,
            width: res,
            train: manifest
                .splits
                .train
                .par_iter()
                .map(|s| (render(s), s.valid_targets.iter().copied().collect()))
                .collect(),
            test: manifest
                .splits
                .test
                .par_iter()
                .map(|s| (render(s), s.primary_class))
                .collect(),
        }
    }

    pub fn push_train(&mut self, img: &Image, targets: Vec<usize>) {
        self.train.push((to_bytes(img), targets));
    }

    pub fn push_test(&mut self, img: &Image, class: usize) {
        self.test.push((to_bytes(img), class));
    }

    /// Per-channel mean and standard deviation over the training images.
    pub fn channel_stats(&self) -> ([f64; 3], [f64; 3]) {
        let mut sum = [0f64; 3];
        let mut sq = [0f64; 3];
        let mut n = 0usize;
        for (img, _) in &self.train {
            for px in img.chunks_exact(3) {
                for c in 0..3 {
                    let v = (px[c] as f32 / 255.0) as f64;
                    sum[c] += v;
                    sq[c] += v * v;
                }
                n += 1;
            }
        }
        let n = n.max(1) as f64;
        let mean = sum.map(|s| s / n);
        let mut std = [1.0; 3];
        for c in 0..3 {
            std[c] = (sq[c] / n - mean[c] * mean[c]).max(1e-12).sqrt().max(1e-3);
        }
        (mean, std)
    }
}

pub fn accuracy_on(model: &dyn ModelUnderTest, data: &TrainingData) -> Result<f64> {
    if data.test.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (bytes, class) in &data.test {
        if model
            .predict(&to_image(data.height, data.width, bytes))?
            .argmax()
            == *class
        {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.test.len() as f64)
}

/// Trains `model` in place. Single-threaded and deterministic for a fixed
/// seed; normalization statistics are taken from the training images.
pub fn train(model: &mut ReferenceCnn, data: &TrainingData, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if (data.height, data.width) != (model.height, model.width) {
        return Err(Error::DimensionMismatch {
            expected: (model.height, model.width),
            got: (data.height, data.width),
        });
    }
    let (mean, std) = data.channel_stats();
    model.mean = mean;
    model.std = std;

    let mut velocity = CnnParams::zeros_like(&model.params);
    let mut grads = CnnParams::zeros_like(&model.params);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut rng = seed::rng(cfg.seed, "train-shuffle", epoch as u64);
        order.shuffle(&mut rng);
        let mut aug_rng = seed::rng(cfg.seed, "train-augment", epoch as u64);
        let mut loss_sum = 0f64;

        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.fill(0.0);
            let mut batch_loss = 0f64;
            for &i in batch {
                let (bytes, targets) = &data.train[i];
                let a = cfg.augment;
                let flip = a.flip && aug_rng.random_bool(0.5);
                let m = a.max_shift as i64;
                let (dx, dy) = (aug_rng.random_range(-m..=m), aug_rng.random_range(-m..=m));
                let pixels = transform_hwc(
                    bytes,
                    data.height,
                    data.width,
                    flip,
                    dx as isize,
                    dy as isize,
                );
                let x = model.normalize(pixels.into_iter());
                let trace = model.forward(&x);
                let (loss, dlogits) = multi_target_cross_entropy(&trace.logits, targets);
                batch_loss += loss;
                model.backward(&trace, &dlogits, Some(&mut grads), false);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss;

            let scale = 1.0 / batch.len() as f64;
            for ((p, g), v) in model
                .params
                .tensors_mut()
                .into_iter()
                .zip(grads.tensors())
                .zip(velocity.tensors_mut())
            {
                for ((p, g), v) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                    let d = g * scale + cfg.weight_decay * *p;
                    *v = cfg.momentum * *v + d;
                    *p -= lr * *v;
                }
            }
        }

        let entry = EpochLog {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum / data.train.len() as f64,
            test_accuracy: accuracy_on(model, data)?,
        };
        log::info!(
            "epoch {:>3}  lr {:.4}  loss {:.4}  test acc {:.4}",
            entry.epoch,
            entry.learning_rate,
            entry.train_loss,
            entry.test_accuracy
        );
        log.epochs.push(entry);
    }
    Ok(log)
}
