//! Train/test split generation, multi-label targets and on-disk manifests.
//!
//! Layout under the dataset root:
//!
//! ```text
//! manifest.json
//! train/images/{id}.png   train/maps/{id}.png
//! test/images/{id}.png    test/maps/{id}.png
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::render::{render_scene, Image, PartMap, RenderConfig};
use crate::scenegen::{
    self, ClassSpace, PartSet, PartSlot, SceneSpec, BACKGROUND_COUNT_RANGE, ILLUMINATION_RANGE,
    OFFSET_RANGE, ROTATION_RANGE_DEG, SCALE_RANGE,
};
use crate::seed;
use crate::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    /// Fraction of training samples that get at least one part removed.
    pub fraction_with_removals: f64,
    /// Removal counts drawn uniformly for a selected sample; zero entries
    /// are skipped so that selection always removes something.
    pub removal_count_support: Vec<usize>,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            fraction_with_removals: 0.5,
            removal_count_support: (0..=5).collect(),
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction_with_removals) {
            return Err(Error::InvalidArgument(
                "augmentation fraction must lie in [0, 1]".into(),
            ));
        }
        if self.removal_count_support.iter().any(|&n| n > 5) {
            return Err(Error::InvalidArgument(
                "removal counts must lie in 0..=5".into(),
            ));
        }
        if self.fraction_with_removals > 0.0 && self.nonzero_counts().is_empty() {
            return Err(Error::InvalidArgument(
                "removal support has no positive count".into(),
            ));
        }
        Ok(())
    }

    fn nonzero_counts(&self) -> Vec<usize> {
        self.removal_count_support
            .iter()
            .copied()
            .filter(|&n| n > 0)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub scene: SceneSpec,
    pub image_path: String,
    pub partmap_path: String,
    pub primary_class: usize,
    pub valid_targets: BTreeSet<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Sampling ranges, recorded for transparency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRanges {
    pub rotation_deg: (f64, f64),
    pub scale: (f64, f64),
    pub offset: (f64, f64),
    pub illumination: (f64, f64),
    pub background_objects: (usize, usize),
}

impl Default for GenerationRanges {
    fn default() -> Self {
        GenerationRanges {
            rotation_deg: ROTATION_RANGE_DEG,
            scale: SCALE_RANGE,
            offset: OFFSET_RANGE,
            illumination: ILLUMINATION_RANGE,
            background_objects: BACKGROUND_COUNT_RANGE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub global_seed: u64,
    pub class_space: ClassSpace,
    pub render_config: RenderConfig,
    pub augmentation: AugmentationPolicy,
    pub ranges: GenerationRanges,
    /// Test split size.
    #[serde(rename = "N")]
    pub n_test: usize,
    /// Mean number of background objects per test image.
    #[serde(rename = "B")]
    pub mean_background_objects: f64,
    pub splits: Splits,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.splits.train,
            Split::Test => &self.splits.test,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("manifest", e))
    }

    pub fn from_json(text: &str) -> Result<DatasetManifest> {
        let m: DatasetManifest =
            serde_json::from_str(text).map_err(|e| Error::json("manifest", e))?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest schema version {}",
                m.schema_version
            )));
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for s in self.splits.train.iter().chain(&self.splits.test) {
            if !ids.insert(&s.sample_id) {
                return Err(Error::Format(format!(
                    "duplicate sample id {}",
                    s.sample_id
                )));
            }
            if s.scene.class_id >= self.class_space.len()
                || !s.valid_targets.contains(&s.primary_class)
            {
                return Err(Error::Format(format!(
                    "inconsistent labels for {}",
                    s.sample_id
                )));
            }
        }
        if self.n_test != self.splits.test.len() {
            return Err(Error::Format("N does not match the test split size".into()));
        }
        Ok(())
    }

    pub fn load(root: &Path) -> Result<DatasetManifest> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text)
    }

    pub fn load_image(&self, root: &Path, sample: &Sample) -> Result<Image> {
        let path = root.join(&sample.image_path);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Image::from_png(&bytes)
    }

    pub fn load_partmap(&self, root: &Path, sample: &Sample) -> Result<PartMap> {
        let path = root.join(&sample.partmap_path);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        PartMap::from_png(&bytes)
    }
}

/// SHA-256 of the manifest file, hex encoded.
pub fn manifest_hash(root: &Path) -> Result<String> {
    let path = root.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Every class agreeing with the scene's class on all present slots.
pub fn valid_targets(space: &ClassSpace, scene: &SceneSpec) -> BTreeSet<usize> {
    (0..space.len())
        .filter(|&c| space.agree_on(scene.class_id, c, scene.present_parts))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: 5000,
            test: 500,
        }
    }
}

fn make_sample(
    space: &ClassSpace,
    policy: &AugmentationPolicy,
    global_seed: u64,
    split: Split,
    index: usize,
) -> Sample {
    let sample_seed = seed::derive(global_seed, split.name(), index as u64);
    let class_id = index % space.len();
    let mut scene = scenegen::sample_scene(space, class_id, sample_seed);
    if split == Split::Train {
        let mut rng = seed::rng(sample_seed, "augment", 0);
        if rng.random_bool(policy.fraction_with_removals) {
            let counts = policy.nonzero_counts();
            let n = counts[rng.random_range(0..counts.len())];
            let mut slots = PartSlot::ALL;
            slots.shuffle(&mut rng);
            let removed: PartSet = slots[..n].iter().copied().collect();
            scene.present_parts = scene.present_parts.difference(removed);
        }
    }
    let sample_id = format!("{}-{index:05}", split.name());
    Sample {
        image_path: format!("{}/images/{sample_id}.png", split.name()),
        partmap_path: format!("{}/maps/{sample_id}.png", split.name()),
        valid_targets: valid_targets(space, &scene),
        primary_class: class_id,
        sample_id,
        scene,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Builds the manifest without touching the disk.
pub fn plan_dataset(
    space: &ClassSpace,
    sizes: SplitSizes,
    policy: &AugmentationPolicy,
    cfg: &RenderConfig,
    global_seed: u64,
) -> Result<DatasetManifest> {
    if sizes.train == 0 || sizes.test == 0 {
        return Err(Error::InvalidArgument(
            "split sizes must be at least 1".into(),
        ));
    }
    policy.validate()?;
    cfg.validate()?;
    let build = |split: Split, n: usize| -> Vec<Sample> {
        (0..n)
            .into_par_iter()
            .map(|i| make_sample(space, policy, global_seed, split, i))
            .collect()
    };
    let train = build(Split::Train, sizes.train);
    let test = build(Split::Test, sizes.test);
    let total_bg: usize = test.iter().map(|s| s.scene.background_objects.len()).sum();
    Ok(DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        global_seed,
        class_space: space.clone(),
        render_config: cfg.clone(),
        augmentation: policy.clone(),
        ranges: GenerationRanges::default(),
        n_test: test.len(),
        mean_background_objects: total_bg as f64 / test.len() as f64,
        splits: Splits { train, test },
    })
}

/// Generates both splits, renders every sample and writes the dataset to `root`.
pub fn generate_dataset(
    space: &ClassSpace,
    sizes: SplitSizes,
    policy: &AugmentationPolicy,
    cfg: &RenderConfig,
    global_seed: u64,
    root: &Path,
) -> Result<DatasetManifest> {
    let manifest = plan_dataset(space, sizes, policy, cfg, global_seed)?;
    for split in [Split::Train, Split::Test] {
        for sub in ["images", "maps"] {
            let dir: PathBuf = root.join(split.name()).join(sub);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
    }
    manifest
        .splits
        .train
        .par_iter()
        .chain(manifest.splits.test.par_iter())
        .try_for_each(|s| -> Result<()> {
            let (img, map) = render_scene(space, &s.scene, cfg);
            write_file(&root.join(&s.image_path), &img.to_png()?)?;
            write_file(&root.join(&s.partmap_path), &map.to_png()?)
        })?;
    write_file(&root.join(MANIFEST_FILE), manifest.to_json()?.as_bytes())?;
    Ok(manifest)
}
