//! Reduction of explanations to part-level quantities: a per-entity
//! importance score (PI) and a thresholded set of important entities (P).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::explain::{Explanation, ExplanationKind};
use crate::render::{dilate_mask, part_mask, Mask, PartMap, BACKGROUND_OBJECT_BASE};
use crate::scenegen::{PartSet, PartSlot};
use crate::{Error, Result};

/// Side of the square structuring element applied to entity masks.
pub const DILATION_PX: usize = 5;

pub const DEFAULT_THRESHOLD_GRID: [f64; 8] = [0.005, 0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.25];

/// A scene element whose importance is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "id")]
pub enum Entity {
    Part(PartSlot),
    Background(u32),
}

impl Entity {
    pub fn label(self) -> u16 {
        match self {
            Entity::Part(s) => s.label(),
            Entity::Background(id) => BACKGROUND_OBJECT_BASE + id as u16,
        }
    }

    pub fn from_label(label: u16) -> Option<Entity> {
        if let Some(s) = PartSlot::from_label(label) {
            Some(Entity::Part(s))
        } else if label >= BACKGROUND_OBJECT_BASE {
            Some(Entity::Background((label - BACKGROUND_OBJECT_BASE) as u32))
        } else {
            None
        }
    }

    pub fn slot(self) -> Option<PartSlot> {
        match self {
            Entity::Part(s) => Some(s),
            Entity::Background(_) => None,
        }
    }
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entity::Part(s) => write!(f, "{s}"),
            Entity::Background(id) => write!(f, "bg{id}"),
        }
    }
}

/// Raw and dilated masks of every entity visible in a part map.
#[derive(Clone, Debug)]
pub struct EntityMasks {
    pub width: usize,
    pub height: usize,
    pub entities: Vec<EntityMask>,
}

#[derive(Clone, Debug)]
pub struct EntityMask {
    pub entity: Entity,
    pub pixels: usize,
    pub dilated: Mask,
}

impl EntityMasks {
    pub fn new(map: &PartMap) -> EntityMasks {
        let labels: BTreeSet<u16> = map.labels.iter().copied().collect();
        let entities = labels
            .into_iter()
            .filter_map(Entity::from_label)
            .map(|entity| {
                let raw = part_mask(map, entity.label());
                EntityMask {
                    entity,
                    pixels: raw.count(),
                    dilated: dilate_mask(&raw, DILATION_PX).expect("odd kernel"),
                }
            })
            .collect();
        EntityMasks {
            width: map.width,
            height: map.height,
            entities,
        }
    }

    pub fn get(&self, entity: Entity) -> Option<&EntityMask> {
        self.entities.iter().find(|e| e.entity == entity)
    }

    fn check(&self, e: &Explanation) -> Result<()> {
        if (e.width, e.height) != (self.width, self.height) {
            return Err(Error::DimensionMismatch {
                expected: (self.height, self.width),
                got: (e.height, e.width),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartImportance {
    pub scores: BTreeMap<Entity, f64>,
    /// False for binary maps, which carry no per-part magnitude.
    pub defined: bool,
}

impl PartImportance {
    pub fn score(&self, entity: Entity) -> f64 {
        self.scores.get(&entity).copied().unwrap_or(0.0)
    }

    /// Scores of the five slots in slot order; absent slots score 0.
    pub fn slot_vector(&self) -> [f64; 5] {
        PartSlot::ALL.map(|s| self.score(Entity::Part(s)))
    }

    pub fn sum_over(&self, parts: PartSet) -> f64 {
        parts.iter().map(|s| self.score(Entity::Part(s))).sum()
    }
}

/// Signed attribution sum inside each entity's dilated mask.
pub fn part_importance(expl: &Explanation, masks: &EntityMasks) -> Result<PartImportance> {
    masks.check(expl)?;
    let Some(attr) = expl.as_attribution() else {
        return Ok(PartImportance {
            scores: BTreeMap::new(),
            defined: false,
        });
    };
    let scores = masks
        .entities
        .iter()
        .map(|m| {
            let s = m
                .dilated
                .bits
                .iter()
                .zip(attr)
                .filter(|(&b, _)| b)
                .map(|(_, a)| a)
                .sum();
            (m.entity, s)
        })
        .collect();
    Ok(PartImportance {
        scores,
        defined: true,
    })
}

/// Entities deemed important at threshold fraction `t`.
///
/// Attribution maps: an entity's positive mass inside its dilated mask
/// must exceed `t` times the image's total positive mass. Binary maps: the
/// flagged pixels inside the dilated mask must reach `t` times the
/// entity's own pixel count.
pub fn important_parts(
    expl: &Explanation,
    masks: &EntityMasks,
    t: f64,
) -> Result<BTreeSet<Entity>> {
    masks.check(expl)?;
    let mut out = BTreeSet::new();
    match &expl.kind {
        ExplanationKind::Attribution(a) => {
            let total: f64 = a.iter().map(|v| v.max(0.0)).sum();
            if total <= 0.0 {
                return Ok(out);
            }
            for m in &masks.entities {
                let mass: f64 = m
                    .dilated
                    .bits
                    .iter()
                    .zip(a)
                    .filter(|(&b, _)| b)
                    .map(|(_, v)| v.max(0.0))
                    .sum();
                if mass > t * total {
                    out.insert(m.entity);
                }
            }
        }
        ExplanationKind::BinaryMap(flags) => {
            for m in &masks.entities {
                if m.pixels == 0 {
                    continue;
                }
                let hit = m
                    .dilated
                    .bits
                    .iter()
                    .zip(flags)
                    .filter(|(&d, &f)| d && f)
                    .count();
                if hit as f64 >= t * m.pixels as f64 {
                    out.insert(m.entity);
                }
            }
        }
    }
    Ok(out)
}

/// Slots among a set of entities.
pub fn slots_of(entities: &BTreeSet<Entity>) -> PartSet {
    entities.iter().filter_map(|e| e.slot()).collect()
}

/// Completeness measurements at one threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletenessScores {
    pub csdc: f64,
    pub pc: f64,
    pub dc: f64,
    pub d: f64,
}

impl CompletenessScores {
    /// `mean(mean(CSDC, PC, DC), D)`.
    pub fn objective(&self) -> f64 {
        ((self.csdc + self.pc + self.dc) / 3.0 + self.d) / 2.0
    }
}

/// Grid point maximizing the completeness objective; ties go to the
/// smaller threshold. Also returns the objective at every grid point.
pub fn select_threshold<F>(
    grid: &[f64],
    mut eval: F,
) -> Result<(f64, Vec<(f64, CompletenessScores)>)>
where
    F: FnMut(f64) -> Result<CompletenessScores>,
{
    validate_grid(grid)?;
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut table = Vec::with_capacity(sorted.len());
    let mut best: Option<(f64, f64)> = None;
    for &t in &sorted {
        let scores = eval(t)?;
        let obj = scores.objective();
        if best.is_none_or(|(_, b)| obj > b) {
            best = Some((t, obj));
        }
        table.push((t, scores));
    }
    Ok((best.expect("non-empty grid").0, table))
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("threshold grid is empty".into()));
    }
    if let Some(t) = grid.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "threshold {t} outside (0, 1)"
        )));
    }
    Ok(())
}
