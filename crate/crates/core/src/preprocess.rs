//! Building filtering, cropping and class-balanced train/validation splits.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::class::{DamageClass, DisasterType};
use crate::error::{Error, Result};
use crate::geom::{polygon_bbox, BBox};
use crate::raster::{crop_building, RgbImage};
use crate::scene::{BuildingAnnotation, ScenePair};

/// Smallest bounding-box area (px²) a building needs to be kept.
pub const MIN_BBOX_AREA: u64 = 2000;
pub const DEFAULT_CROP_SIDE: usize = 224;
pub const DEFAULT_SPLIT_RATIO: f64 = 0.8;

/// One observation: co-located pre/post crops of a single building.
#[derive(Clone, Debug, PartialEq)]
pub struct BuildingRecord {
    pub crop_pre: RgbImage,
    pub crop_post: RgbImage,
    pub label: DamageClass,
    pub disaster_type: DisasterType,
    pub bbox_area: u64,
    pub scene_id: String,
    pub uid: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropOptions {
    pub min_area: u64,
    pub crop_side: usize,
    pub pad: u32,
}

impl Default for CropOptions {
    fn default() -> Self {
        Self { min_area: MIN_BBOX_AREA, crop_side: DEFAULT_CROP_SIDE, pad: 0 }
    }
}

/// Keeps buildings whose box area is at least `min_area` and whose label is
/// a damage class. Input order is preserved. Footprints with zero-area bounds
/// fall below any positive threshold and are dropped too.
pub fn filter_buildings(annotations: &[BuildingAnnotation], min_area: u64) -> Vec<(BuildingAnnotation, BBox)> {
    annotations
        .iter()
        .filter(|a| !a.is_unclassified() && a.damage_class().is_some())
        .filter_map(|a| {
            let b = polygon_bbox(&a.polygon).ok()?;
            (b.area() >= min_area).then(|| (a.clone(), b))
        })
        .collect()
}

/// Filters a scene's buildings and crops each survivor from both rasters.
/// Boxes lying wholly outside the raster cannot be cropped and are skipped.
pub fn extract_records(scene: &ScenePair, opts: &CropOptions) -> Vec<BuildingRecord> {
    filter_buildings(&scene.annotations, opts.min_area)
        .into_iter()
        .filter_map(|(ann, bbox)| {
            let crop_pre = crop_building(&scene.pre_image, &bbox, opts.pad, opts.crop_side).ok()?;
            let crop_post = crop_building(&scene.post_image, &bbox, opts.pad, opts.crop_side).ok()?;
            Some(BuildingRecord {
                crop_pre,
                crop_post,
                label: ann.damage_class()?,
                disaster_type: scene.disaster_type,
                bbox_area: bbox.area(),
                scene_id: scene.scene_id.clone(),
                uid: ann.uid,
            })
        })
        .collect()
}

/// Train/validation partition, as indices into the record list it was
/// built from.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitManifest {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub seed: u64,
    pub ratio: f64,
}

impl SplitManifest {
    /// SHA-256 over the `(uid, side)` assignment in manifest order.
    pub fn checksum(&self, records: &[BuildingRecord]) -> String {
        let mut h = Sha256::new();
        for (side, idx) in [("train", &self.train), ("val", &self.val)] {
            for &i in idx.iter() {
                h.update(records[i].uid.as_bytes());
                h.update([0u8]);
                h.update(side.as_bytes());
                h.update(*b"\n");
            }
        }
        hex::encode(h.finalize())
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty() && self.val.is_empty()
    }
}

/// Downsamples every class to the minority count `m`, then sends
/// `floor(ratio * m)` of each class to train and the rest to validation.
///
/// Records are ordered by uid before sampling, so the selected uids depend
/// only on the record set, `ratio` and `seed`, not on input order.
pub fn balanced_split(records: &[BuildingRecord], ratio: f64, seed: u64) -> Result<SplitManifest> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidRatio(ratio));
    }
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert(r.uid.as_str()) {
            return Err(Error::DuplicateUid(r.uid.clone()));
        }
    }
    let mut by_class: [Vec<usize>; 4] = Default::default();
    for (i, r) in records.iter().enumerate() {
        by_class[r.label.index()].push(i);
    }
    for (c, idx) in by_class.iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::InsufficientClass { class: c as u8, count: idx.len() });
        }
    }
    let m = by_class.iter().map(Vec::len).min().unwrap_or(0);
    // guard against 0.8 * 90 landing a hair under 72
    let n_train = libm::floor(ratio * m as f64 + 1e-9) as usize;

    let mut train = Vec::with_capacity(n_train * 4);
    let mut val = Vec::with_capacity((m - n_train) * 4);
    for (c, idx) in by_class.iter_mut().enumerate() {
        idx.sort_by(|&a, &b| records[a].uid.cmp(&records[b].uid));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        idx.shuffle(&mut rng);
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..m]);
    }
    Ok(SplitManifest { train, val, seed, ratio })
}
