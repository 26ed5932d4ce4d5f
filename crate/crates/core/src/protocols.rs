//! Intervention-based ground truth and the per-sample scoring rules of every
//! protocol, plus aggregation into dimension scores.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::interfaces::Entity;
use crate::model::{Logits, ModelUnderTest};
use crate::render::{render_scene, RenderConfig};
use crate::scenegen::{apply_intervention, ClassSpace, Intervention, PartSet, PartSlot, SceneSpec};
use crate::Result;

/// Relative logit drop below which an entity counts as unimportant.
pub const UNIMPORTANT_FRACTION: f64 = 0.05;

/// A removal that does not lower the logit at all is unimportant too, which
/// matters when the original logit is exactly zero.
pub fn is_unimportant(drop: f64, logit: f64) -> bool {
    drop <= 0.0 || drop < (UNIMPORTANT_FRACTION * logit).abs()
}

/// Target-logit drops caused by removing each entity on its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub target: usize,
    pub logit: f64,
    pub part_drops: BTreeMap<PartSlot, f64>,
    pub bg_drops: BTreeMap<u32, f64>,
}

impl GroundTruth {
    pub fn unimportant(&self) -> BTreeSet<Entity> {
        let parts = self
            .part_drops
            .iter()
            .filter(|(_, &d)| is_unimportant(d, self.logit))
            .map(|(&s, _)| Entity::Part(s));
        let bgs = self
            .bg_drops
            .iter()
            .filter(|(_, &d)| is_unimportant(d, self.logit))
            .map(|(&id, _)| Entity::Background(id));
        parts.chain(bgs).collect()
    }

    /// Drops for the five slots in slot order; absent slots drop 0.
    pub fn slot_drops(&self) -> [f64; 5] {
        PartSlot::ALL.map(|s| self.part_drops.get(&s).copied().unwrap_or(0.0))
    }

    pub fn unimportant_background_count(&self) -> usize {
        self.bg_drops
            .values()
            .filter(|&&d| is_unimportant(d, self.logit))
            .count()
    }
}

fn logits_of(
    model: &dyn ModelUnderTest,
    space: &ClassSpace,
    scene: &SceneSpec,
    cfg: &RenderConfig,
) -> Result<Logits> {
    model.predict(&render_scene(space, scene, cfg).0)
}

/// Re-renders the scene without each present part and each background
/// object in turn.
pub fn ground_truth_importance(
    model: &dyn ModelUnderTest,
    space: &ClassSpace,
    scene: &SceneSpec,
    cfg: &RenderConfig,
    target: usize,
) -> Result<GroundTruth> {
    let logit = logits_of(model, space, scene, cfg)?.get(target);
    let mut part_drops = BTreeMap::new();
    for s in scene.present_parts.iter() {
        let edited = apply_intervention(scene, &Intervention::RemoveParts(PartSet::EMPTY.with(s)))?;
        part_drops.insert(
            s,
            logit - logits_of(model, space, &edited, cfg)?.get(target),
        );
    }
    let mut bg_drops = BTreeMap::new();
    for id in scene.background_ids() {
        let edited = apply_intervention(scene, &Intervention::RemoveBackgroundObject(id))?;
        bg_drops.insert(
            id,
            logit - logits_of(model, space, &edited, cfg)?.get(target),
        );
    }
    Ok(GroundTruth {
        target,
        logit,
        part_drops,
        bg_drops,
    })
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rank correlation with average-rank ties. Zero when either
/// input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman inputs differ in length");
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    (cov / (va * vb).sqrt()).clamp(-1.0, 1.0)
}

/// Best overlap of the important slots with any sufficient set of the class.
pub fn csdc_sample(important: PartSet, sufficient_sets: &[PartSet]) -> f64 {
    sufficient_sets
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| important.intersection(*s).len() as f64 / s.len() as f64)
        .fold(0.0, f64::max)
}

/// Fraction of unimportant entities flagged as important; `None` when no
/// entity is unimportant.
pub fn distraction_sample(
    important: &BTreeSet<Entity>,
    unimportant: &BTreeSet<Entity>,
) -> Option<f64> {
    if unimportant.is_empty() {
        return None;
    }
    Some(important.intersection(unimportant).count() as f64 / unimportant.len() as f64)
}

/// Two classes that each agree with the sample's class on exactly two
/// slots, with disjoint agreeing slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastPair {
    pub c1: usize,
    pub c2: usize,
    pub parts1: PartSet,
    pub parts2: PartSet,
}

/// First valid pair in ordinal order of `(c1, c2)` with `c1 < c2`.
pub fn find_contrast_pair(space: &ClassSpace, class: usize) -> Option<ContrastPair> {
    let common: Vec<(usize, PartSet)> = (0..space.len())
        .filter(|&k| k != class)
        .map(|k| (k, space.common_parts(class, k)))
        .filter(|(_, p)| p.len() == 2)
        .collect();
    for (i, &(c1, p1)) in common.iter().enumerate() {
        for &(c2, p2) in &common[i + 1..] {
            if p1.intersection(p2).is_empty() {
                return Some(ContrastPair {
                    c1,
                    c2,
                    parts1: p1,
                    parts2: p2,
                });
            }
        }
    }
    None
}

/// Model-side filter: removing a class's own parts must hurt that class
/// more than removing the other class's parts.
///
/// `without1`/`without2` are the logits after removing `parts1`/`parts2`.
pub fn contrast_pair_passes(pair: &ContrastPair, without1: &Logits, without2: &Logits) -> bool {
    without1.get(pair.c1) < without2.get(pair.c1) && without2.get(pair.c2) < without1.get(pair.c2)
}

/// `½([PI'(e1) > PI'(e2)] + [PI''(e1) < PI''(e2)])` where `'` sums over
/// `parts1` and `''` over `parts2`.
pub fn target_sensitivity_sample(pair: &ContrastPair, pi1: &[f64; 5], pi2: &[f64; 5]) -> f64 {
    let sum = |pi: &[f64; 5], parts: PartSet| parts.iter().map(|s| pi[s.index()]).sum::<f64>();
    let first = sum(pi1, pair.parts1) > sum(pi2, pair.parts1);
    let second = sum(pi1, pair.parts2) < sum(pi2, pair.parts2);
    (first as u8 as f64 + second as u8 as f64) / 2.0
}

/// Maps a mean correlation in [-1, 1] to [0, 1].
pub fn correlation_score(mean_rho: f64) -> f64 {
    0.5 + mean_rho / 2.0
}

/// Mean of a non-empty slice, 0 for an empty one.
pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct RawScores {
    pub A: f64,
    pub BI: f64,
    pub CSDC: f64,
    pub PC: f64,
    pub DC: f64,
    pub D: f64,
    pub SD: f64,
    pub TS: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ProtocolScores {
    pub A: f64,
    pub BI: f64,
    pub CSDC: f64,
    pub PC: f64,
    pub DC: f64,
    pub D: f64,
    pub SD: f64,
    pub TS: f64,
    pub Com: f64,
    pub Cor: f64,
    pub Con: f64,
    pub mX: f64,
}

impl ProtocolScores {
    pub fn fields(&self) -> [(&'static str, f64); 12] {
        [
            ("A", self.A),
            ("BI", self.BI),
            ("CSDC", self.CSDC),
            ("PC", self.PC),
            ("DC", self.DC),
            ("D", self.D),
            ("SD", self.SD),
            ("TS", self.TS),
            ("Com", self.Com),
            ("Cor", self.Cor),
            ("Con", self.Con),
            ("mX", self.mX),
        ]
    }
}

pub fn aggregate(raw: RawScores) -> ProtocolScores {
    let com = ((raw.CSDC + raw.PC + raw.DC) / 3.0 + raw.D) / 2.0;
    let cor = raw.SD;
    let con = raw.TS;
    ProtocolScores {
        A: raw.A,
        BI: raw.BI,
        CSDC: raw.CSDC,
        PC: raw.PC,
        DC: raw.DC,
        D: raw.D,
        SD: raw.SD,
        TS: raw.TS,
        Com: com,
        Cor: cor,
        Con: con,
        mX: (com + cor + con) / 3.0,
    }
}
