//! Whole-run evaluation: per-sample ground truth and explanations, threshold
//! calibration, and the eight protocol scores.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::explain::Explainer;
use crate::interfaces::{
    important_parts, part_importance, select_threshold, slots_of, validate_grid,
    CompletenessScores, Entity, EntityMasks, DEFAULT_THRESHOLD_GRID,
};
use crate::model::{Logits, ModelUnderTest};
use crate::protocols::{
    aggregate, contrast_pair_passes, correlation_score, csdc_sample, distraction_sample,
    find_contrast_pair, ground_truth_importance, mean, spearman, target_sensitivity_sample,
    ContrastPair, GroundTruth, ProtocolScores, RawScores,
};
use crate::render::{render_scene, RenderConfig};
use crate::scenegen::{ClassSpace, PartSet, SceneSpec};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub threshold_grid: Vec<f64>,
    /// Leading samples used to pick the threshold.
    pub calibration_size: usize,
    /// Skips calibration and uses this threshold.
    pub fixed_threshold: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold_grid: DEFAULT_THRESHOLD_GRID.to_vec(),
            calibration_size: 100,
            fixed_threshold: None,
        }
    }
}

/// One sample to evaluate.
#[derive(Clone, Debug)]
pub struct EvalSample {
    pub sample_id: String,
    pub scene: SceneSpec,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub samples: usize,
    pub correct: usize,
    pub background_objects: usize,
    pub background_unimportant: usize,
    pub csdc_kept: usize,
    pub distractibility_kept: usize,
    pub contrast_pairs_found: usize,
    pub target_sensitivity_kept: usize,
    pub calibration_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub class: usize,
    pub predicted: usize,
    pub target_logit: f64,
    pub important: Vec<Entity>,
    pub csdc: Option<f64>,
    pub preserved: bool,
    pub deleted: bool,
    pub distraction: Option<f64>,
    pub rho: Option<f64>,
    pub contrast_pair: Option<ContrastPair>,
    pub target_sensitivity: Option<f64>,
    pub background_objects: usize,
    pub background_unimportant: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub t: f64,
    pub scores: CompletenessScores,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub scores: ProtocolScores,
    pub threshold: f64,
    pub calibration: Vec<CalibrationPoint>,
    pub counts: SampleCounts,
    pub records: Vec<SampleRecord>,
    #[serde(skip)]
    pub timing: Timing,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Timing {
    pub prepare_secs: f64,
    pub calibrate_secs: f64,
    pub score_secs: f64,
}

struct ContrastState {
    pair: ContrastPair,
    passes: bool,
    pi1: [f64; 5],
    pi2: [f64; 5],
}

struct SampleState {
    sample_id: String,
    scene: SceneSpec,
    masks: EntityMasks,
    predicted: usize,
    gt: GroundTruth,
    unimportant: BTreeSet<Entity>,
    explanation: crate::explain::Explanation,
    rho: Option<f64>,
    contrast: Option<ContrastState>,
    /// Predicted class for a rendering with exactly the given parts present.
    subset_preds: BTreeMap<PartSet, usize>,
}

struct Context<'a> {
    model: &'a dyn ModelUnderTest,
    explainer: &'a dyn Explainer,
    space: &'a ClassSpace,
    render: &'a RenderConfig,
}

impl Context<'_> {
    fn logits(&self, scene: &SceneSpec) -> Result<Logits> {
        self.model
            .predict(&render_scene(self.space, scene, self.render).0)
    }

    fn with_parts(scene: &SceneSpec, parts: PartSet) -> SceneSpec {
        SceneSpec {
            present_parts: parts,
            ..scene.clone()
        }
    }

    fn prepare(&self, sample: &EvalSample) -> Result<SampleState> {
        let scene = &sample.scene;
        let class = scene.class_id;
        let (image, map) = render_scene(self.space, scene, self.render);
        let masks = EntityMasks::new(&map);
        let logits = self.model.predict(&image)?;
        if logits.len() != self.space.len() {
            return Err(Error::Format(format!(
                "model returned {} logits for {} classes",
                logits.len(),
                self.space.len()
            )));
        }
        let predicted = logits.argmax();
        let gt = ground_truth_importance(self.model, self.space, scene, self.render, class)?;
        let explanation = self.explainer.explain(self.model, &image, class)?;
        let pi = part_importance(&explanation, &masks)?;
        let rho = pi
            .defined
            .then(|| spearman(&pi.slot_vector(), &gt.slot_drops()));

        let contrast = match find_contrast_pair(self.space, class) {
            Some(pair) if !self.explainer.binary() => {
                let without1 = self.logits(&Self::with_parts(
                    scene,
                    scene.present_parts.difference(pair.parts1),
                ))?;
                let without2 = self.logits(&Self::with_parts(
                    scene,
                    scene.present_parts.difference(pair.parts2),
                ))?;
                let passes = contrast_pair_passes(&pair, &without1, &without2);
                let (pi1, pi2) = if passes {
                    let e1 = self.explainer.explain(self.model, &image, pair.c1)?;
                    let e2 = self.explainer.explain(self.model, &image, pair.c2)?;
                    (
                        part_importance(&e1, &masks)?.slot_vector(),
                        part_importance(&e2, &masks)?.slot_vector(),
                    )
                } else {
                    ([0.0; 5], [0.0; 5])
                };
                Some(ContrastState {
                    pair,
                    passes,
                    pi1,
                    pi2,
                })
            }
            Some(pair) => Some(ContrastState {
                pair,
                passes: false,
                pi1: [0.0; 5],
                pi2: [0.0; 5],
            }),
            None => None,
        };

        let mut subset_preds = BTreeMap::new();
        subset_preds.insert(scene.present_parts, predicted);
        Ok(SampleState {
            sample_id: sample.sample_id.clone(),
            scene: scene.clone(),
            masks,
            predicted,
            unimportant: gt.unimportant(),
            gt,
            explanation,
            rho,
            contrast,
            subset_preds,
        })
    }

    fn ensure_subset(&self, s: &mut SampleState, parts: PartSet) -> Result<usize> {
        if let Some(&p) = s.subset_preds.get(&parts) {
            return Ok(p);
        }
        let p = self.logits(&Self::with_parts(&s.scene, parts))?.argmax();
        s.subset_preds.insert(parts, p);
        Ok(p)
    }
}

/// Per-sample outcome at one threshold.
struct Outcome {
    important: BTreeSet<Entity>,
    csdc: Option<f64>,
    preserved: bool,
    deleted: bool,
    distraction: Option<f64>,
}

fn score_at(ctx: &Context<'_>, states: &mut [SampleState], t: f64) -> Result<Vec<Outcome>> {
    states
        .par_iter_mut()
        .map(|s| {
            let important = important_parts(&s.explanation, &s.masks, t)?;
            let kept = slots_of(&important).intersection(s.scene.present_parts);
            let full = s.scene.present_parts;
            let keep_pred = ctx.ensure_subset(s, kept)?;
            let del_pred = ctx.ensure_subset(s, full.difference(kept))?;
            let class = s.scene.class_id;
            let csdc = (s.predicted == class)
                .then(|| csdc_sample(kept, &ctx.space.class(class).sufficient_sets));
            Ok(Outcome {
                csdc,
                preserved: keep_pred == s.predicted,
                deleted: del_pred != s.predicted,
                distraction: distraction_sample(&important, &s.unimportant),
                important,
            })
        })
        .collect()
}

fn completeness(outcomes: &[Outcome]) -> CompletenessScores {
    let n = outcomes.len().max(1) as f64;
    let csdc: Vec<f64> = outcomes.iter().filter_map(|o| o.csdc).collect();
    let dist: Vec<f64> = outcomes.iter().filter_map(|o| o.distraction).collect();
    CompletenessScores {
        csdc: mean(&csdc),
        pc: outcomes.iter().filter(|o| o.preserved).count() as f64 / n,
        dc: outcomes.iter().filter(|o| o.deleted).count() as f64 / n,
        d: if dist.is_empty() {
            1.0
        } else {
            1.0 - mean(&dist)
        },
    }
}

/// Evaluates `explainer` on `model` over `samples`, targeting each sample's
/// true class.
pub fn evaluate(
    model: &dyn ModelUnderTest,
    explainer: &dyn Explainer,
    space: &ClassSpace,
    render: &RenderConfig,
    samples: &[EvalSample],
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    validate_grid(&cfg.threshold_grid)?;
    if let Some(t) = cfg.fixed_threshold {
        validate_grid(&[t])?;
    }
    let ctx = Context {
        model,
        explainer,
        space,
        render,
    };

    let clock = Instant::now();
    let mut states = samples
        .par_iter()
        .map(|s| ctx.prepare(s))
        .collect::<Result<Vec<_>>>()?;
    let prepare_secs = clock.elapsed().as_secs_f64();
    log::info!("prepared {} samples in {prepare_secs:.1}s", states.len());

    let clock = Instant::now();
    let n_cal = cfg.calibration_size.clamp(1, states.len());
    let (threshold, calibration) = match cfg.fixed_threshold {
        Some(t) => (t, Vec::new()),
        None => {
            let (t, table) = select_threshold(&cfg.threshold_grid, |t| {
                Ok(completeness(&score_at(&ctx, &mut states[..n_cal], t)?))
            })?;
            let table = table
                .into_iter()
                .map(|(t, scores)| CalibrationPoint {
                    t,
                    objective: scores.objective(),
                    scores,
                })
                .collect();
            (t, table)
        }
    };
    let calibrate_secs = clock.elapsed().as_secs_f64();
    log::info!("threshold t* = {threshold}");

    let clock = Instant::now();
    let outcomes = score_at(&ctx, &mut states, threshold)?;
    let comp = completeness(&outcomes);

    let mut counts = SampleCounts {
        samples: states.len(),
        calibration_samples: if cfg.fixed_threshold.is_some() {
            0
        } else {
            n_cal
        },
        ..Default::default()
    };
    let mut rhos = Vec::new();
    let mut ts = Vec::new();
    let mut records = Vec::with_capacity(states.len());
    for (s, o) in states.iter().zip(outcomes) {
        let class = s.scene.class_id;
        counts.correct += usize::from(s.predicted == class);
        counts.background_objects += s.gt.bg_drops.len();
        counts.background_unimportant += s.gt.unimportant_background_count();
        counts.csdc_kept += usize::from(o.csdc.is_some());
        counts.distractibility_kept += usize::from(o.distraction.is_some());
        if let Some(r) = s.rho {
            rhos.push(r);
        }
        let ts_score = s.contrast.as_ref().and_then(|c| {
            c.passes
                .then(|| target_sensitivity_sample(&c.pair, &c.pi1, &c.pi2))
        });
        counts.contrast_pairs_found += usize::from(s.contrast.is_some());
        if let Some(v) = ts_score {
            counts.target_sensitivity_kept += 1;
            ts.push(v);
        }
        records.push(SampleRecord {
            sample_id: s.sample_id.clone(),
            class,
            predicted: s.predicted,
            target_logit: s.gt.logit,
            important: o.important.into_iter().collect(),
            csdc: o.csdc,
            preserved: o.preserved,
            deleted: o.deleted,
            distraction: o.distraction,
            rho: s.rho,
            contrast_pair: s.contrast.as_ref().map(|c| c.pair),
            target_sensitivity: ts_score,
            background_objects: s.gt.bg_drops.len(),
            background_unimportant: s.gt.unimportant_background_count(),
        });
    }

    let binary = explainer.binary();
    let raw = RawScores {
        A: counts.correct as f64 / counts.samples as f64,
        BI: if counts.background_objects == 0 {
            1.0
        } else {
            counts.background_unimportant as f64 / counts.background_objects as f64
        },
        CSDC: comp.csdc,
        PC: comp.pc,
        DC: comp.dc,
        D: comp.d,
        SD: if binary || rhos.is_empty() {
            0.0
        } else {
            correlation_score(mean(&rhos))
        },
        TS: if binary { 0.0 } else { mean(&ts) },
    };
    let score_secs = clock.elapsed().as_secs_f64();

    Ok(Evaluation {
        scores: aggregate(raw),
        threshold,
        calibration,
        counts,
        records,
        timing: Timing {
            prepare_secs,
            calibrate_secs,
            score_secs,
        },
    })
}

/// Accuracy of `model` on the given scenes, rendering each one.
pub fn accuracy(
    model: &dyn ModelUnderTest,
    space: &ClassSpace,
    render: &RenderConfig,
    samples: &[EvalSample],
) -> Result<f64> {
    let correct = samples
        .par_iter()
        .map(|s| {
            Ok(usize::from(
                model
                    .predict(&render_scene(space, &s.scene, render).0)?
                    .argmax()
                    == s.scene.class_id,
            ))
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(correct.iter().sum::<usize>() as f64 / samples.len().max(1) as f64)
}

/// Background independence alone: the fraction of background objects whose
/// removal leaves the true-class logit within 5%.
pub fn background_independence(
    model: &dyn ModelUnderTest,
    space: &ClassSpace,
    render: &RenderConfig,
    samples: &[EvalSample],
) -> Result<f64> {
    let pairs = samples
        .par_iter()
        .map(|s| {
            let gt = ground_truth_importance(model, space, &s.scene, render, s.scene.class_id)?;
            Ok((gt.unimportant_background_count(), gt.bg_drops.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (un, total) = pairs.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(if total == 0 {
        1.0
    } else {
        un as f64 / total as f64
    })
}

impl From<&crate::dataset::Sample> for EvalSample {
    fn from(s: &crate::dataset::Sample) -> EvalSample {
        EvalSample {
            sample_id: s.sample_id.clone(),
            scene: s.scene.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::{Method, MethodId};
    use crate::model::stubs::ConstantModel;
    use crate::scenegen::{sample_class_space, sample_scene};

    fn samples(space: &ClassSpace, n: usize) -> Vec<EvalSample> {
        (0..n)
            .map(|i| EvalSample {
                sample_id: format!("s{i}"),
                scene: sample_scene(space, i % space.len(), i as u64),
            })
            .collect()
    }

    #[test]
    fn constant_model_degenerates_cleanly() {
        let space = sample_class_space(3);
        let mut logits = vec![0.0; 50];
        logits[0] = 1.0;
        let model = ConstantModel { logits };
        let cfg = RenderConfig {
            resolution: 32,
            ..Default::default()
        };
        let ev = evaluate(
            &model,
            &Method::new(MethodId::Ixg),
            &space,
            &cfg,
            &samples(&space, 10),
            &EvalConfig::default(),
        )
        .unwrap();
        let s = ev.scores;
        assert_eq!(s.PC, 1.0);
        assert_eq!(s.DC, 0.0);
        assert_eq!(s.BI, 1.0);
        assert_eq!(s.A, 0.1);
        assert_eq!(s.SD, 0.5);
        assert_eq!(s.TS, 0.0);
        assert_eq!(ev.threshold, 0.005);
        assert!(s.fields().iter().all(|(_, v)| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn empty_input_is_rejected() {
        let space = sample_class_space(3);
        let model = ConstantModel {
            logits: vec![0.0; 50],
        };
        let r = evaluate(
            &model,
            &Method::new(MethodId::Ixg),
            &space,
            &RenderConfig::default(),
            &[],
            &EvalConfig::default(),
        );
        assert!(r.is_err());
    }
}
