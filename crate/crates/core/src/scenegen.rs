//! Class space, part catalog, scene sampling and semantic interventions.
//!
//! A bird is a neutral body plus five part slots. Each class fixes one variant
//! per slot; a scene adds per-image nuisance (background objects, viewpoint,
//! illumination). Interventions edit the symbolic scene, never pixels.

use std::collections::HashSet;
use std::fmt;
use std::sync::OnceLock;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

pub const NUM_CLASSES: usize = 50;
pub const NUM_SLOTS: usize = 5;
/// Width of one bird-local unit, as a fraction of the image width.
pub const BIRD_UNIT: f64 = 0.18;

pub const ROTATION_RANGE_DEG: (f64, f64) = (-25.0, 25.0);
pub const SCALE_RANGE: (f64, f64) = (0.7, 1.1);
pub const OFFSET_RANGE: (f64, f64) = (-0.06, 0.06);
pub const ILLUMINATION_RANGE: (f64, f64) = (0.7, 1.3);
pub const BACKGROUND_COUNT_RANGE: (usize, usize) = (3, 6);
pub const BACKGROUND_SCALE_RANGE: (f64, f64) = (0.10, 0.22);
/// Maximum fraction of the bird's bounding box a background object may cover.
pub const BACKGROUND_MAX_OVERLAP: f64 = 0.3;

pub type Rgb = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartSlot {
    Beak,
    Wing,
    Foot,
    Eye,
    Tail,
}

impl PartSlot {
    pub const ALL: [PartSlot; NUM_SLOTS] = [
        PartSlot::Beak,
        PartSlot::Wing,
        PartSlot::Foot,
        PartSlot::Eye,
        PartSlot::Tail,
    ];

    /// Zero-based position, used for array indexing.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Label encoding in part maps: 1..=5.
    pub fn label(self) -> u16 {
        self as u16 + 1
    }

    pub fn from_index(i: usize) -> Option<PartSlot> {
        Self::ALL.get(i).copied()
    }

    pub fn from_label(label: u16) -> Option<PartSlot> {
        (1..=5)
            .contains(&label)
            .then(|| Self::ALL[label as usize - 1])
    }

    pub fn variant_count(self) -> usize {
        match self {
            PartSlot::Beak => 4,
            PartSlot::Wing => 6,
            PartSlot::Foot => 4,
            PartSlot::Eye => 3,
            PartSlot::Tail => 9,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PartSlot::Beak => "beak",
            PartSlot::Wing => "wing",
            PartSlot::Foot => "foot",
            PartSlot::Eye => "eye",
            PartSlot::Tail => "tail",
        }
    }
}

impl fmt::Display for PartSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A set of part slots stored as a 5-bit mask. Serialized as a list of names.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "Vec<PartSlot>", from = "Vec<PartSlot>")]
pub struct PartSet(u8);

impl PartSet {
    pub const EMPTY: PartSet = PartSet(0);
    pub const FULL: PartSet = PartSet(0b1_1111);

    pub fn from_bits(bits: u8) -> PartSet {
        PartSet(bits & Self::FULL.0)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, slot: PartSlot) -> bool {
        self.0 & (1 << slot.index()) != 0
    }

    pub fn with(self, slot: PartSlot) -> PartSet {
        PartSet(self.0 | (1 << slot.index()))
    }

    pub fn without(self, slot: PartSlot) -> PartSet {
        PartSet(self.0 & !(1 << slot.index()))
    }

    pub fn union(self, other: PartSet) -> PartSet {
        PartSet(self.0 | other.0)
    }

    pub fn intersection(self, other: PartSet) -> PartSet {
        PartSet(self.0 & other.0)
    }

    pub fn difference(self, other: PartSet) -> PartSet {
        PartSet(self.0 & !other.0)
    }

    pub fn is_subset(self, other: PartSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = PartSlot> {
        PartSlot::ALL.into_iter().filter(move |s| self.contains(*s))
    }

    /// All 32 subsets of the five slots, in bit order.
    pub fn all_subsets() -> impl Iterator<Item = PartSet> {
        (0u8..32).map(PartSet)
    }
}

impl FromIterator<PartSlot> for PartSet {
    fn from_iter<I: IntoIterator<Item = PartSlot>>(iter: I) -> Self {
        iter.into_iter().fold(PartSet::EMPTY, PartSet::with)
    }
}

impl From<Vec<PartSlot>> for PartSet {
    fn from(v: Vec<PartSlot>) -> Self {
        v.into_iter().collect()
    }
}

impl From<PartSet> for Vec<PartSlot> {
    fn from(s: PartSet) -> Self {
        s.iter().collect()
    }
}

impl fmt::Debug for PartSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

// ---------------------------------------------------------------------------
// Geometry and catalog
// ---------------------------------------------------------------------------

/// A filled shape in bird-local coordinates (x towards the beak, y down).
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Polygon(Vec<[f64; 2]>),
    Ellipse {
        center: [f64; 2],
        radii: [f64; 2],
        angle_deg: f64,
    },
}

impl Primitive {
    /// Even-odd point-in-polygon, or the implicit ellipse equation.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Primitive::Polygon(pts) => {
                let mut inside = false;
                let n = pts.len();
                let mut j = n - 1;
                for i in 0..n {
                    let (a, b) = (pts[i], pts[j]);
                    if (a[1] > p[1]) != (b[1] > p[1]) {
                        let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                        if p[0] < x {
                            inside = !inside;
                        }
                    }
                    j = i;
                }
                inside
            }
            Primitive::Ellipse {
                center,
                radii,
                angle_deg,
            } => {
                let (s, c) = angle_deg.to_radians().sin_cos();
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / radii[0]).powi(2) + (v / radii[1]).powi(2) <= 1.0
            }
        }
    }

    /// Axis-aligned local bounding box `[x0, y0, x1, y1]`.
    pub fn bounds(&self) -> [f64; 4] {
        match self {
            Primitive::Polygon(pts) => pts.iter().fold(
                [
                    f64::INFINITY,
                    f64::INFINITY,
                    f64::NEG_INFINITY,
                    f64::NEG_INFINITY,
                ],
                |b, p| {
                    [
                        b[0].min(p[0]),
                        b[1].min(p[1]),
                        b[2].max(p[0]),
                        b[3].max(p[1]),
                    ]
                },
            ),
            Primitive::Ellipse {
                center,
                radii,
                angle_deg,
            } => {
                let (s, c) = angle_deg.to_radians().sin_cos();
                let hx = ((radii[0] * c).powi(2) + (radii[1] * s).powi(2)).sqrt();
                let hy = ((radii[0] * s).powi(2) + (radii[1] * c).powi(2)).sqrt();
                [
                    center[0] - hx,
                    center[1] - hy,
                    center[0] + hx,
                    center[1] + hy,
                ]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartVariant {
    pub slot: PartSlot,
    pub variant_index: usize,
    pub primitives: Vec<Primitive>,
    pub color: Rgb,
}

#[derive(Clone, Debug)]
pub struct PartVariantCatalog {
    pub body: Vec<Primitive>,
    pub body_color: Rgb,
    variants: [Vec<PartVariant>; NUM_SLOTS],
}

impl PartVariantCatalog {
    pub fn variants(&self, slot: PartSlot) -> &[PartVariant] {
        &self.variants[slot.index()]
    }

    pub fn variant(&self, slot: PartSlot, index: usize) -> &PartVariant {
        &self.variants[slot.index()][index]
    }
}

/// Distinct hue for the `index`-th variant of the whole catalog. Stepping by
/// 7 of 26 keeps the variants of one slot far apart on the colour wheel.
fn variant_color(index: usize) -> Rgb {
    let h = ((index * 7) % VARIANT_TOTAL) as f64 / VARIANT_TOTAL as f64 * 6.0;
    let (s, v) = (0.85, 0.78);
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

const VARIANT_TOTAL: usize = 26;
const WING_BASE: usize = 4;
const FOOT_BASE: usize = 10;
const EYE_BASE: usize = 14;
const TAIL_BASE: usize = 17;

fn poly(pts: &[[f64; 2]]) -> Primitive {
    Primitive::Polygon(pts.to_vec())
}

fn leg(x: f64, width: f64, length: f64, toe: f64) -> Primitive {
    let h = width / 2.0;
    poly(&[
        [x - h, 0.42],
        [x + h, 0.42],
        [x + h, length - 0.1],
        [x + toe, length],
        [x - toe, length],
        [x - h, length - 0.1],
    ])
}

fn build_catalog() -> PartVariantCatalog {
    let body = vec![
        Primitive::Ellipse {
            center: [0.0, 0.0],
            radii: [1.0, 0.62],
            angle_deg: 0.0,
        },
        Primitive::Ellipse {
            center: [0.88, -0.52],
            radii: [0.44, 0.44],
            angle_deg: 0.0,
        },
    ];

    let beak_shapes = [
        vec![poly(&[[1.14, -0.84], [1.95, -0.50], [1.14, -0.18]])],
        vec![poly(&[[1.14, -0.80], [2.1, -0.52], [1.14, -0.24]])],
        vec![poly(&[
            [1.14, -0.86],
            [1.78, -0.80],
            [1.86, -0.24],
            [1.62, -0.42],
            [1.14, -0.30],
        ])],
        vec![poly(&[[1.12, -0.98], [1.74, -0.52], [1.12, -0.10]])],
    ];
    let beak_colors = (0..4).map(variant_color);

    let eye = |rx: f64, ry: f64| {
        vec![Primitive::Ellipse {
            center: [0.84, -0.60],
            radii: [rx, ry],
            angle_deg: 0.0,
        }]
    };
    let eye_shapes = [eye(0.30, 0.30), eye(0.30, 0.30), eye(0.34, 0.25)];
    let eye_colors = (EYE_BASE..EYE_BASE + 3).map(variant_color);

    let foot_shapes = [
        vec![leg(-0.28, 0.20, 1.10, 0.22), leg(0.22, 0.20, 1.10, 0.22)],
        vec![leg(-0.28, 0.30, 1.12, 0.30), leg(0.22, 0.30, 1.12, 0.30)],
        vec![leg(-0.28, 0.19, 1.08, 0.40), leg(0.22, 0.19, 1.08, 0.40)],
        vec![leg(-0.28, 0.21, 1.30, 0.26), leg(0.22, 0.21, 1.30, 0.26)],
    ];
    let foot_colors = (FOOT_BASE..FOOT_BASE + 4).map(variant_color);

    let tail_fan = vec![poly(&[
        [-0.85, -0.15],
        [-1.62, -0.58],
        [-1.78, 0.22],
        [-0.85, 0.10],
    ])];
    let tail_long = vec![poly(&[
        [-0.85, -0.14],
        [-1.95, -0.34],
        [-1.95, -0.10],
        [-0.85, 0.10],
    ])];
    let tail_fork = vec![poly(&[
        [-0.85, -0.16],
        [-1.78, -0.54],
        [-1.38, -0.04],
        [-1.78, 0.40],
        [-0.85, 0.12],
    ])];
    let tail_shapes = [tail_fan, tail_long, tail_fork];

    let wing_round = vec![Primitive::Ellipse {
        center: [-0.08, -0.06],
        radii: [0.56, 0.32],
        angle_deg: -12.0,
    }];
    let wing_pointed = vec![poly(&[
        [0.42, -0.30],
        [0.02, -0.42],
        [-0.45, -0.26],
        [-0.82, 0.14],
        [-0.15, 0.20],
        [0.34, 0.05],
    ])];
    let wing_broad = vec![poly(&[
        [0.40, -0.40],
        [-0.58, -0.50],
        [-0.72, 0.06],
        [-0.20, 0.30],
        [0.30, 0.14],
    ])];
    let wings = [
        wing_round.clone(),
        wing_round,
        wing_pointed.clone(),
        wing_pointed,
        wing_broad.clone(),
        wing_broad,
    ];

    let make = |slot: PartSlot, list: Vec<(Vec<Primitive>, Rgb)>| -> Vec<PartVariant> {
        list.into_iter()
            .enumerate()
            .map(|(variant_index, (primitives, color))| PartVariant {
                slot,
                variant_index,
                primitives,
                color,
            })
            .collect()
    };

    let beaks = beak_shapes.into_iter().zip(beak_colors).collect();
    let eyes = eye_shapes.into_iter().zip(eye_colors).collect();
    let feet = foot_shapes.into_iter().zip(foot_colors).collect();
    let wings = wings
        .into_iter()
        .zip((WING_BASE..FOOT_BASE).map(variant_color))
        .collect();
    let tails = tail_shapes
        .iter()
        .flat_map(|shape| std::iter::repeat_n(shape.clone(), 3))
        .zip((TAIL_BASE..VARIANT_TOTAL).map(variant_color))
        .collect();

    PartVariantCatalog {
        body,
        body_color: [0.72, 0.64, 0.52],
        variants: [
            make(PartSlot::Beak, beaks),
            make(PartSlot::Wing, wings),
            make(PartSlot::Foot, feet),
            make(PartSlot::Eye, eyes),
            make(PartSlot::Tail, tails),
        ],
    }
}

/// The fixed variant inventory shared by every class space.
pub fn catalog() -> &'static PartVariantCatalog {
    static CATALOG: OnceLock<PartVariantCatalog> = OnceLock::new();
    CATALOG.get_or_init(build_catalog)
}

// ---------------------------------------------------------------------------
// Class space
// ---------------------------------------------------------------------------

/// One variant index per slot, in slot order.
pub type VariantTuple = [u8; NUM_SLOTS];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDefinition {
    pub class_id: usize,
    pub assignment: VariantTuple,
    pub sufficient_sets: Vec<PartSet>,
}

impl ClassDefinition {
    pub fn variant(&self, slot: PartSlot) -> usize {
        self.assignment[slot.index()] as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSpace {
    pub seed: u64,
    pub classes: Vec<ClassDefinition>,
}

impl ClassSpace {
    /// Builds a space from explicit tuples. Used for hand-built toy spaces;
    /// tuples must be distinct and within the catalog's variant counts.
    pub fn from_assignments(seed: u64, tuples: &[VariantTuple]) -> Result<ClassSpace> {
        let mut seen = HashSet::new();
        for t in tuples {
            for slot in PartSlot::ALL {
                if t[slot.index()] as usize >= slot.variant_count() {
                    return Err(Error::InvalidArgument(format!(
                        "variant {} out of range for slot {slot}",
                        t[slot.index()]
                    )));
                }
            }
            if !seen.insert(*t) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate class tuple {t:?}"
                )));
            }
        }
        let mut space = ClassSpace {
            seed,
            classes: tuples
                .iter()
                .enumerate()
                .map(|(class_id, &assignment)| ClassDefinition {
                    class_id,
                    assignment,
                    sufficient_sets: Vec::new(),
                })
                .collect(),
        };
        for c in 0..space.classes.len() {
            space.classes[c].sufficient_sets = compute_sufficient_sets(&space, c);
        }
        Ok(space)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class(&self, class_id: usize) -> &ClassDefinition {
        &self.classes[class_id]
    }

    /// True when classes `a` and `b` share the same variant on every slot of `slots`.
    pub fn agree_on(&self, a: usize, b: usize, slots: PartSet) -> bool {
        let (ta, tb) = (&self.classes[a].assignment, &self.classes[b].assignment);
        slots.iter().all(|s| ta[s.index()] == tb[s.index()])
    }

    /// Slots on which classes `a` and `b` use the same variant.
    pub fn common_parts(&self, a: usize, b: usize) -> PartSet {
        PartSlot::ALL
            .into_iter()
            .filter(|s| {
                self.classes[a].assignment[s.index()] == self.classes[b].assignment[s.index()]
            })
            .collect()
    }
}

pub fn sample_class_space(seed: u64) -> ClassSpace {
    let mut rng = seed::rng(seed, "class-space", 0);
    let mut seen = HashSet::new();
    let mut tuples = Vec::with_capacity(NUM_CLASSES);
    while tuples.len() < NUM_CLASSES {
        let mut t = [0u8; NUM_SLOTS];
        for slot in PartSlot::ALL {
            t[slot.index()] = rng.random_range(0..slot.variant_count()) as u8;
        }
        if seen.insert(t) {
            tuples.push(t);
        }
    }
    ClassSpace::from_assignments(seed, &tuples).expect("sampled tuples are distinct and in range")
}

fn is_sufficient(space: &ClassSpace, class_id: usize, slots: PartSet) -> bool {
    (0..space.len()).all(|other| other == class_id || !space.agree_on(class_id, other, slots))
}

/// All minimal slot subsets that identify `class_id` uniquely within the space,
/// sorted by size and then by slot encoding.
pub fn compute_sufficient_sets(space: &ClassSpace, class_id: usize) -> Vec<PartSet> {
    let sufficient: Vec<bool> = PartSet::all_subsets()
        .map(|s| is_sufficient(space, class_id, s))
        .collect();
    let mut out: Vec<PartSet> = PartSet::all_subsets()
        .filter(|s| sufficient[s.bits() as usize])
        // sufficiency is upward closed, so checking one-smaller subsets is enough
        .filter(|s| {
            s.iter()
                .all(|slot| !sufficient[s.without(slot).bits() as usize])
        })
        .collect();
    out.sort_by_key(|s| (s.len(), s.iter().map(PartSlot::label).collect::<Vec<_>>()));
    out
}

// ---------------------------------------------------------------------------
// Scenes
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundShape {
    Disc,
    Triangle,
    Quad,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundObject {
    pub object_id: u32,
    pub shape: BackgroundShape,
    pub color: Rgb,
    /// Centre in image-fraction coordinates.
    pub position: [f64; 2],
    /// Side length as a fraction of the image width.
    pub scale: f64,
}

impl BackgroundObject {
    /// Geometry in image-fraction coordinates.
    pub fn primitive(&self) -> Primitive {
        let [cx, cy] = self.position;
        let h = self.scale / 2.0;
        match self.shape {
            BackgroundShape::Disc => Primitive::Ellipse {
                center: [cx, cy],
                radii: [h, h],
                angle_deg: 0.0,
            },
            BackgroundShape::Triangle => poly(&[[cx, cy - h], [cx + h, cy + h], [cx - h, cy + h]]),
            BackgroundShape::Quad => poly(&[
                [cx - h, cy - h],
                [cx + h, cy - h],
                [cx + h, cy + h],
                [cx - h, cy + h],
            ]),
        }
    }

    pub fn bounds(&self) -> [f64; 4] {
        let h = self.scale / 2.0;
        let [cx, cy] = self.position;
        [cx - h, cy - h, cx + h, cy + h]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub flip: bool,
    pub rotation_deg: f64,
    pub scale: f64,
    pub offset: [f64; 2],
}

impl Viewpoint {
    pub const IDENTITY: Viewpoint = Viewpoint {
        flip: false,
        rotation_deg: 0.0,
        scale: 1.0,
        offset: [0.0, 0.0],
    };

    /// Bird-local point to image-fraction coordinates.
    pub fn local_to_frac(&self, p: [f64; 2]) -> [f64; 2] {
        let k = BIRD_UNIT * self.scale;
        let mut x = p[0] * k;
        let y = p[1] * k;
        if self.flip {
            x = -x;
        }
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        [
            0.5 + self.offset[0] + c * x - s * y,
            0.5 + self.offset[1] + s * x + c * y,
        ]
    }

    /// Inverse of [`Viewpoint::local_to_frac`].
    pub fn frac_to_local(&self, f: [f64; 2]) -> [f64; 2] {
        let dx = f[0] - 0.5 - self.offset[0];
        let dy = f[1] - 0.5 - self.offset[1];
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let mut x = c * dx + s * dy;
        let y = -s * dx + c * dy;
        if self.flip {
            x = -x;
        }
        let k = BIRD_UNIT * self.scale;
        [x / k, y / k]
    }

    /// Image-fraction bounding box of a local-space primitive.
    pub fn frac_bounds(&self, prim: &Primitive) -> [f64; 4] {
        let [x0, y0, x1, y1] = prim.bounds();
        [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
            .into_iter()
            .map(|p| self.local_to_frac(p))
            .fold(
                [
                    f64::INFINITY,
                    f64::INFINITY,
                    f64::NEG_INFINITY,
                    f64::NEG_INFINITY,
                ],
                |b, p| {
                    [
                        b[0].min(p[0]),
                        b[1].min(p[1]),
                        b[2].max(p[0]),
                        b[3].max(p[1]),
                    ]
                },
            )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub class_id: usize,
    pub present_parts: PartSet,
    pub background_objects: Vec<BackgroundObject>,
    pub viewpoint: Viewpoint,
    pub illumination: f64,
    pub seed: u64,
}

fn in_range(v: f64, (lo, hi): (f64, f64)) -> bool {
    v.is_finite() && v >= lo && v <= hi
}

impl SceneSpec {
    /// A complete bird with no background objects and the identity viewpoint.
    pub fn canonical(class_id: usize, seed: u64) -> SceneSpec {
        SceneSpec {
            class_id,
            present_parts: PartSet::FULL,
            background_objects: Vec::new(),
            viewpoint: Viewpoint::IDENTITY,
            illumination: 1.0,
            seed,
        }
    }

    pub fn validate(&self, space: &ClassSpace) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.class_id >= space.len() {
            return bad(format!("class {} outside class space", self.class_id));
        }
        let v = &self.viewpoint;
        if !in_range(v.rotation_deg, ROTATION_RANGE_DEG)
            || !in_range(v.scale, SCALE_RANGE)
            || !v.offset.iter().all(|o| in_range(*o, OFFSET_RANGE))
            || !in_range(self.illumination, ILLUMINATION_RANGE)
        {
            return bad("scene parameter outside its range".into());
        }
        let mut ids = HashSet::new();
        for o in &self.background_objects {
            if o.object_id >= 100 || !ids.insert(o.object_id) {
                return bad(format!("bad background object id {}", o.object_id));
            }
        }
        Ok(())
    }

    pub fn background_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.background_objects.iter().map(|o| o.object_id)
    }
}

/// Image-fraction bounding box of the complete bird of `class` under `view`.
pub fn bird_bounds(space: &ClassSpace, class_id: usize, view: &Viewpoint) -> [f64; 4] {
    let cat = catalog();
    let class = space.class(class_id);
    let parts = PartSlot::ALL
        .iter()
        .flat_map(|&s| cat.variant(s, class.variant(s)).primitives.iter());
    cat.body
        .iter()
        .chain(parts)
        .map(|p| view.frac_bounds(p))
        .fold(
            [
                f64::INFINITY,
                f64::INFINITY,
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
            ],
            |b, p| {
                [
                    b[0].min(p[0]),
                    b[1].min(p[1]),
                    b[2].max(p[2]),
                    b[3].max(p[3]),
                ]
            },
        )
}

fn overlap_area(a: [f64; 4], b: [f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    w * h
}

pub fn sample_scene(space: &ClassSpace, class_id: usize, seed: u64) -> SceneSpec {
    let mut rng = seed::rng(seed, "scene", class_id as u64);
    let u = |rng: &mut rand_chacha::ChaCha8Rng, (lo, hi): (f64, f64)| rng.random_range(lo..=hi);

    let viewpoint = Viewpoint {
        flip: rng.random_bool(0.5),
        rotation_deg: u(&mut rng, ROTATION_RANGE_DEG),
        scale: u(&mut rng, SCALE_RANGE),
        offset: [u(&mut rng, OFFSET_RANGE), u(&mut rng, OFFSET_RANGE)],
    };
    let illumination = u(&mut rng, ILLUMINATION_RANGE);

    let bird = bird_bounds(space, class_id, &viewpoint);
    let bird_area = (bird[2] - bird[0]) * (bird[3] - bird[1]);
    let count = rng.random_range(BACKGROUND_COUNT_RANGE.0..=BACKGROUND_COUNT_RANGE.1);
    let mut background_objects = Vec::with_capacity(count);
    for object_id in 0..count as u32 {
        let shape = *[
            BackgroundShape::Disc,
            BackgroundShape::Triangle,
            BackgroundShape::Quad,
        ]
        .choose(&mut rng)
        .unwrap();
        let color = [
            rng.random_range(0.25..0.75),
            rng.random_range(0.25..0.75),
            rng.random_range(0.25..0.75),
        ];
        let mut obj = BackgroundObject {
            object_id,
            shape,
            color,
            position: [0.0, 0.0],
            scale: u(&mut rng, BACKGROUND_SCALE_RANGE),
        };
        // rejection sampling; the image corners always leave room
        loop {
            obj.position = [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)];
            if overlap_area(obj.bounds(), bird) <= BACKGROUND_MAX_OVERLAP * bird_area {
                break;
            }
        }
        background_objects.push(obj);
    }

    SceneSpec {
        class_id,
        present_parts: PartSet::FULL,
        background_objects,
        viewpoint,
        illumination,
        seed,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "arg", rename_all = "snake_case")]
pub enum Intervention {
    RemoveParts(PartSet),
    KeepOnlyParts(PartSet),
    RemoveBackgroundObject(u32),
}

pub fn apply_intervention(scene: &SceneSpec, iv: &Intervention) -> Result<SceneSpec> {
    let mut out = scene.clone();
    match iv {
        Intervention::RemoveParts(s) => out.present_parts = scene.present_parts.difference(*s),
        Intervention::KeepOnlyParts(s) => out.present_parts = scene.present_parts.intersection(*s),
        Intervention::RemoveBackgroundObject(id) => {
            let pos = scene
                .background_objects
                .iter()
                .position(|o| o.object_id == *id)
                .ok_or_else(|| {
                    Error::MalformedIntervention(format!("no background object with id {id}"))
                })?;
            out.background_objects.remove(pos);
        }
    }
    Ok(out)
}
