//! Typed sample sets loaded from a benchmark manifest, with seeded batching
//! and the two train-time augmentations (horizontal flip, brightness/contrast
//! jitter), reproducible from (seed, epoch, sample_id).

use crate::datagen::{Manifest, Split};
use crate::error::{Error, Result};
use crate::img::{self, Image};
use crate::rng;
use rand::seq::SliceRandom;
use rand::Rng;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Image,
    /// 1 = fake, 0 = real.
    pub label: u8,
    pub domain_id: u32,
    pub sample_id: String,
}

#[derive(Debug, Clone)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
    pub name: String,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn filter(&self, name: &str, pred: impl Fn(&Sample) -> bool) -> SampleSet {
        SampleSet {
            samples: self.samples.iter().filter(|s| pred(s)).cloned().collect(),
            name: name.to_string(),
        }
    }

    pub fn split(&self, name: &str, manifest: &Manifest, split: Split) -> SampleSet {
        let wanted: std::collections::HashSet<String> = manifest
            .records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.sample_id())
            .collect();
        self.filter(name, |s| wanted.contains(&s.sample_id))
    }
}

/// Load every sample referenced by a manifest. Order follows the manifest.
pub fn load_manifest(path: &Path) -> Result<SampleSet> {
    let manifest = Manifest::load(path)?;
    let root = path.parent().unwrap_or(Path::new("."));
    load_samples(&manifest, root)
}

pub fn load_samples(manifest: &Manifest, root: &Path) -> Result<SampleSet> {
    let mut samples = Vec::with_capacity(manifest.records.len());
    let mut seen = std::collections::HashSet::new();
    for rec in &manifest.records {
        let sample_id = rec.sample_id();
        if !seen.insert(sample_id.clone()) {
            return Err(Error::Manifest {
                sample_id,
                message: "duplicate sample_id".into(),
            });
        }
        let image = img::load_png(&root.join(&rec.relative_path)).map_err(|e| match e {
            Error::Io { path, source } => Error::Io { path, source },
            other => Error::Manifest { sample_id: sample_id.clone(), message: other.to_string() },
        })?;
        if image.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Manifest { sample_id, message: "pixel out of [0,1]".into() });
        }
        samples.push(Sample { image, label: rec.label, domain_id: rec.domain_id, sample_id });
    }
    Ok(SampleSet { samples, name: "manifest".into() })
}

/// One epoch of index batches: a seeded permutation chunked by batch size,
/// last partial batch kept.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream_indexed(seed, "batches", &[epoch]));
    idx.chunks(batch_size).map(|c| c.to_vec()).collect()
}

const FLIP_PROB: f64 = 0.5;
const JITTER_PROB: f64 = 0.5;
const BRIGHTNESS_RANGE: f64 = 0.05;
const CONTRAST_RANGE: f64 = 0.1;

/// Train-time augmentation, keyed by (seed, epoch, sample_id).
pub fn augment(sample: &Sample, seed: u64, epoch: u64) -> Image {
    let mut arng = rng::stream_indexed(seed, "augment", &[epoch, rng::id_hash(&sample.sample_id)]);
    let mut out = sample.image.clone();
    if arng.gen_bool(FLIP_PROB) {
        let (_, _, w) = out.dim();
        let flipped = out.clone();
        for ((c, y, x), v) in out.indexed_iter_mut() {
            *v = flipped[[c, y, w - 1 - x]];
        }
    }
    if arng.gen_bool(JITTER_PROB) {
        let b = arng.gen_range(-BRIGHTNESS_RANGE..BRIGHTNESS_RANGE);
        let c = 1.0 + arng.gen_range(-CONTRAST_RANGE..CONTRAST_RANGE);
        out.mapv_inplace(|v| (0.5 + (v - 0.5) * c + b).clamp(0.0, 1.0));
    }
    out
}
