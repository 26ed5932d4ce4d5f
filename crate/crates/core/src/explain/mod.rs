//! Post-hoc explanation methods. Every method maps `(model, image, target)`
//! to either a signed per-pixel attribution map or a binary importance mask.

mod export;
pub mod gradcam;
pub mod gradient;
pub mod lime;
pub mod random;
pub mod rise;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::ModelUnderTest;
use crate::render::Image;
use crate::{Error, Result};

pub use export::{read_explanation, write_explanation};
pub use gradcam::grad_cam;
pub use gradient::{input_x_gradient, integrated_gradients};
pub use lime::lime_binary;
pub use random::random_attribution;
pub use rise::rise_saliency;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodId {
    Ixg,
    Ig,
    IgAbs,
    GradCam,
    Rise,
    Lime,
    /// Zero-mean uniform noise; a calibration baseline, not an explainer.
    Random,
}

impl MethodId {
    pub const ALL: [MethodId; 7] = [
        MethodId::Ixg,
        MethodId::Ig,
        MethodId::IgAbs,
        MethodId::GradCam,
        MethodId::Rise,
        MethodId::Lime,
        MethodId::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodId::Ixg => "ixg",
            MethodId::Ig => "ig",
            MethodId::IgAbs => "igabs",
            MethodId::GradCam => "gradcam",
            MethodId::Rise => "rise",
            MethodId::Lime => "lime",
            MethodId::Random => "random",
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<MethodId> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExplanationKind {
    /// Row-major `H×W` signed scores.
    Attribution(Vec<f64>),
    /// Row-major `H×W` importance flags.
    BinaryMap(Vec<bool>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Explanation {
    pub width: usize,
    pub height: usize,
    pub kind: ExplanationKind,
    pub method: MethodId,
    pub target: usize,
}

impl Explanation {
    pub fn attribution(
        width: usize,
        height: usize,
        map: Vec<f64>,
        method: MethodId,
        target: usize,
    ) -> Explanation {
        debug_assert_eq!(map.len(), width * height);
        Explanation {
            width,
            height,
            kind: ExplanationKind::Attribution(map),
            method,
            target,
        }
    }

    pub fn binary(
        width: usize,
        height: usize,
        mask: Vec<bool>,
        method: MethodId,
        target: usize,
    ) -> Explanation {
        debug_assert_eq!(mask.len(), width * height);
        Explanation {
            width,
            height,
            kind: ExplanationKind::BinaryMap(mask),
            method,
            target,
        }
    }

    pub fn as_attribution(&self) -> Option<&[f64]> {
        match &self.kind {
            ExplanationKind::Attribution(a) => Some(a),
            ExplanationKind::BinaryMap(_) => None,
        }
    }

    pub fn as_mask(&self) -> Option<&[bool]> {
        match &self.kind {
            ExplanationKind::BinaryMap(m) => Some(m),
            ExplanationKind::Attribution(_) => None,
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self.kind, ExplanationKind::BinaryMap(_))
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Baseline {
    /// All-zero raw pixels, i.e. a black image.
    Black,
    /// Every channel set to the given value.
    Constant(f32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IgConfig {
    pub steps: usize,
    pub baseline: Baseline,
}

impl Default for IgConfig {
    fn default() -> Self {
        IgConfig {
            steps: 64,
            baseline: Baseline::Black,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiseNormalization {
    /// Divide by `n_masks · p`, the expected per-pixel coverage.
    ExpectedCoverage,
    /// Divide each pixel by the summed mask values it actually received.
    EmpiricalCoverage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiseConfig {
    pub n_masks: usize,
    pub cell_grid: usize,
    pub keep_prob: f64,
    pub normalization: RiseNormalization,
    pub seed: u64,
}

impl Default for RiseConfig {
    fn default() -> Self {
        RiseConfig {
            n_masks: 2000,
            cell_grid: 8,
            keep_prob: 0.5,
            normalization: RiseNormalization::ExpectedCoverage,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeConfig {
    pub segment_grid: usize,
    pub n_perturb: usize,
    pub ridge_lambda: f64,
    pub top_k: usize,
    /// Width of the exponential kernel over cosine distance.
    pub kernel_width: f64,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            segment_grid: 8,
            n_perturb: 1000,
            ridge_lambda: 1.0,
            top_k: 8,
            kernel_width: 0.25,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodConfig {
    pub ig: IgConfig,
    pub rise: RiseConfig,
    pub lime: LimeConfig,
    pub random_seed: u64,
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.ig.steps == 0 {
            return bad("IG steps must be positive");
        }
        let r = &self.rise;
        if r.n_masks == 0 || r.cell_grid == 0 {
            return bad("RISE mask count and cell grid must be positive");
        }
        if !(r.keep_prob > 0.0 && r.keep_prob < 1.0) {
            return bad("RISE keep probability must lie in (0, 1)");
        }
        let l = &self.lime;
        if l.segment_grid == 0 || l.n_perturb == 0 || l.top_k == 0 {
            return bad("LIME grid, sample count and top_k must be positive");
        }
        if l.ridge_lambda.is_nan() || l.ridge_lambda <= 0.0 {
            return bad("LIME ridge lambda must be positive");
        }
        if l.kernel_width.is_nan() || l.kernel_width <= 0.0 {
            return bad("LIME kernel width must be positive");
        }
        Ok(())
    }
}

/// Something that explains a model's decision for one target class.
pub trait Explainer: Sync {
    fn explain(
        &self,
        model: &dyn ModelUnderTest,
        image: &Image,
        target: usize,
    ) -> Result<Explanation>;

    /// Whether this explainer yields binary maps (PI is then undefined).
    fn binary(&self) -> bool {
        false
    }
}

/// A built-in method together with its configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Method {
    pub id: MethodId,
    pub config: MethodConfig,
}

impl Method {
    pub fn new(id: MethodId) -> Method {
        Method {
            id,
            config: MethodConfig::default(),
        }
    }
}

impl Explainer for Method {
    fn explain(
        &self,
        model: &dyn ModelUnderTest,
        image: &Image,
        target: usize,
    ) -> Result<Explanation> {
        explain(model, image, target, self.id, &self.config)
    }

    fn binary(&self) -> bool {
        self.id == MethodId::Lime
    }
}

pub fn explain(
    model: &dyn ModelUnderTest,
    image: &Image,
    target: usize,
    method: MethodId,
    cfg: &MethodConfig,
) -> Result<Explanation> {
    match method {
        MethodId::Ixg => input_x_gradient(model, image, target),
        MethodId::Ig => integrated_gradients(model, image, target, &cfg.ig, false),
        MethodId::IgAbs => integrated_gradients(model, image, target, &cfg.ig, true),
        MethodId::GradCam => grad_cam(model, image, target),
        MethodId::Rise => rise_saliency(model, image, target, &cfg.rise),
        MethodId::Lime => lime_binary(model, image, target, &cfg.lime),
        MethodId::Random => Ok(random_attribution(image, target, cfg.random_seed)),
    }
}

/// Capabilities a method needs from the model.
pub fn required_capability(method: MethodId) -> Option<&'static str> {
    match method {
        MethodId::Ixg | MethodId::Ig | MethodId::IgAbs => Some("gradients"),
        MethodId::GradCam => Some("activations"),
        MethodId::Rise | MethodId::Lime | MethodId::Random => None,
    }
}

/// Sums an HWC buffer over channels.
pub(crate) fn channel_sum(hwc: impl Iterator<Item = f64>, pixels: usize) -> Vec<f64> {
    let mut out = vec![0.0; pixels];
    for (i, v) in hwc.enumerate() {
        out[i / 3] += v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in MethodId::ALL {
            assert_eq!(m.name().parse::<MethodId>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert!("lrp".parse::<MethodId>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(MethodConfig::default().validate().is_ok());
        let mut c = MethodConfig::default();
        c.lime.ridge_lambda = 0.0;
        assert!(c.validate().is_err());
        let mut c = MethodConfig::default();
        c.rise.keep_prob = 1.0;
        assert!(c.validate().is_err());
        let mut c = MethodConfig::default();
        c.ig.steps = 0;
        assert!(c.validate().is_err());
    }
}
