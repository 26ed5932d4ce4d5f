//! Shared fixtures: white-box models that read the scene behind an image
//! from a fingerprint registry, and an exact-attribution explainer.

#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use funnybench::dataset::{plan_dataset, AugmentationPolicy, SplitSizes};
use funnybench::eval::EvalSample;
use funnybench::explain::{Explainer, Explanation, MethodId};
use funnybench::model::{Capabilities, Logits, ModelUnderTest};
use funnybench::render::{render_scene, Image, RenderConfig};
use funnybench::scenegen::{ClassSpace, PartSet, PartSlot, SceneSpec};
use funnybench::{Error, Result};
use rayon::prelude::*;

pub mod oracles;

/// Maps rendered images back to the scenes that produced them.
pub struct SceneRegistry {
    pub space: ClassSpace,
    pub render: RenderConfig,
    scenes: RwLock<HashMap<u64, SceneSpec>>,
}

impl SceneRegistry {
    pub fn new(space: ClassSpace, render: RenderConfig) -> Arc<SceneRegistry> {
        Arc::new(SceneRegistry {
            space,
            render,
            scenes: RwLock::new(HashMap::new()),
        })
    }

    /// Every part subset with all background objects, and every single
    /// background-object removal with all parts. Covers all renderings the
    /// protocols ask for.
    pub fn variants(scene: &SceneSpec) -> Vec<SceneSpec> {
        let mut out: Vec<SceneSpec> = PartSet::all_subsets()
            .filter(|p| p.is_subset(scene.present_parts))
            .map(|p| SceneSpec {
                present_parts: p,
                ..scene.clone()
            })
            .collect();
        for i in 0..scene.background_objects.len() {
            let mut s = scene.clone();
            s.background_objects.remove(i);
            out.push(s);
        }
        out
    }

    pub fn register_all(&self, scenes: &[SceneSpec]) {
        let entries: Vec<(u64, SceneSpec)> = scenes
            .par_iter()
            .flat_map_iter(|s| {
                Self::variants(s).into_iter().map(|v| {
                    let (img, _) = render_scene(&self.space, &v, &self.render);
                    (img.fingerprint(), v)
                })
            })
            .collect();
        let mut map = self.scenes.write().unwrap();
        for (fp, scene) in entries {
            map.entry(fp).or_insert(scene);
        }
    }

    pub fn lookup(&self, image: &Image) -> Result<SceneSpec> {
        self.scenes
            .read()
            .unwrap()
            .get(&image.fingerprint())
            .cloned()
            .ok_or_else(|| Error::Format("image not in scene registry".into()))
    }
}

/// Class logits from weighted agreement of the visible parts:
/// `logit_c = Σ_s w_s [s visible and class c uses the shown variant]`.
/// The class after the true one gets a 0.5 bonus so an empty bird is
/// confidently misclassified.
pub struct PartVoteModel {
    pub registry: Arc<SceneRegistry>,
    pub weights: [f64; 5],
}

impl PartVoteModel {
    pub fn logits_for(&self, scene: &SceneSpec) -> Vec<f64> {
        let space = &self.registry.space;
        let truth = space.class(scene.class_id);
        let n = space.len();
        (0..n)
            .map(|c| {
                let def = space.class(c);
                let votes: f64 = scene
                    .present_parts
                    .iter()
                    .filter(|&s| def.variant(s) == truth.variant(s))
                    .map(|s| self.weights[s.index()])
                    .sum();
                votes
                    + if c == (scene.class_id + 1) % n {
                        0.5
                    } else {
                        0.0
                    }
            })
            .collect()
    }
}

impl ModelUnderTest for PartVoteModel {
    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    fn predict(&self, image: &Image) -> Result<Logits> {
        Ok(Logits(self.logits_for(&self.registry.lookup(image)?)))
    }
}

/// The true-class logit is 1 when `slot` is visible and 0 otherwise; all
/// other logits are 0.
pub struct SlotKeyedModel {
    pub registry: Arc<SceneRegistry>,
    pub slot: PartSlot,
}

impl ModelUnderTest for SlotKeyedModel {
    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    fn predict(&self, image: &Image) -> Result<Logits> {
        let scene = self.registry.lookup(image)?;
        let mut l = vec![0.0; self.registry.space.len()];
        l[scene.class_id] = f64::from(u8::from(scene.present_parts.contains(self.slot)));
        Ok(Logits(l))
    }
}

/// Knows the class, but its confidence doubles while background object 0
/// is in the picture.
pub struct BackgroundKeyedModel {
    pub registry: Arc<SceneRegistry>,
}

impl ModelUnderTest for BackgroundKeyedModel {
    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    fn predict(&self, image: &Image) -> Result<Logits> {
        let scene = self.registry.lookup(image)?;
        let mut l = vec![0.0; self.registry.space.len()];
        let has0 = scene.background_objects.iter().any(|o| o.object_id == 0);
        l[scene.class_id] = if has0 { 2.0 } else { 1.0 };
        Ok(Logits(l))
    }
}

fn clearance(
    labels: &[u16],
    width: usize,
    height: usize,
    x: usize,
    y: usize,
    is_other: impl Fn(u16) -> bool,
) -> usize {
    let mut d = 1;
    while d < 12 {
        for yy in y.saturating_sub(d)..=(y + d).min(height - 1) {
            for xx in x.saturating_sub(d)..=(x + d).min(width - 1) {
                if is_other(labels[yy * width + xx]) {
                    return d;
                }
            }
        }
        d += 1;
    }
    d
}

/// Pixel of `label` farthest (Chebyshev) from the other parts' pixels, then
/// from background objects; returns the index and the part clearance.
pub fn deepest_pixel(
    labels: &[u16],
    width: usize,
    height: usize,
    label: u16,
) -> Option<(usize, usize)> {
    let other_part = |l: u16| l != label && (1..=5).contains(&l);
    let object = |l: u16| l >= 100;
    let mut best: Option<(usize, (usize, usize))> = None;
    for y in 0..height {
        for x in 0..width {
            if labels[y * width + x] != label {
                continue;
            }
            // beyond 3 px a pixel is outside every 5×5 dilation
            let key = (
                clearance(labels, width, height, x, y, other_part).min(3),
                clearance(labels, width, height, x, y, object).min(3),
            );
            if best.is_none_or(|(_, bk)| key > bk) {
                best = Some((y * width + x, key));
            }
        }
    }
    best.map(|(p, (d, _))| (p, d))
}

/// Puts the exact contribution `w_s` of each part to the target logit of a
/// [`PartVoteModel`] on that part's deepest pixel.
pub struct ExactVoteAttribution {
    pub registry: Arc<SceneRegistry>,
    pub weights: [f64; 5],
}

impl Explainer for ExactVoteAttribution {
    fn explain(
        &self,
        _model: &dyn ModelUnderTest,
        image: &Image,
        target: usize,
    ) -> Result<Explanation> {
        let scene = self.registry.lookup(image)?;
        let (_, map) = render_scene(&self.registry.space, &scene, &self.registry.render);
        let space = &self.registry.space;
        let mut attr = vec![0.0; image.width * image.height];
        for s in scene.present_parts.iter() {
            if space.class(target).variant(s) != space.class(scene.class_id).variant(s) {
                continue;
            }
            if let Some((p, _)) = deepest_pixel(&map.labels, map.width, map.height, s.label()) {
                attr[p] = self.weights[s.index()];
            }
        }
        Ok(Explanation::attribution(
            image.width,
            image.height,
            attr,
            MethodId::Ixg,
            target,
        ))
    }
}

pub const VOTE_WEIGHTS: [f64; 5] = [5.0, 4.0, 3.0, 2.0, 1.0];

/// Test samples from the standard dataset plan, with a 1-sample train split.
pub fn test_samples(
    space: &ClassSpace,
    render: &RenderConfig,
    n: usize,
    seed: u64,
) -> Vec<EvalSample> {
    let m = plan_dataset(
        space,
        SplitSizes { train: 1, test: n },
        &AugmentationPolicy::default(),
        render,
        seed,
    )
    .expect("valid plan");
    m.splits.test.iter().map(EvalSample::from).collect()
}

pub fn registered(
    space: &ClassSpace,
    render: &RenderConfig,
    samples: &[EvalSample],
) -> Arc<SceneRegistry> {
    let reg = SceneRegistry::new(space.clone(), render.clone());
    let scenes: Vec<SceneSpec> = samples.iter().map(|s| s.scene.clone()).collect();
    reg.register_all(&scenes);
    reg
}
