//! Persisted splits: `manifest.jsonl` plus lossless crop pairs, and the
//! preprocessing pipeline that produces them from a dataset root.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use damage_core::preprocess::extract_records;
use damage_core::{balanced_split, polygon_bbox, BuildingRecord, CropOptions, DamageClass, Error, SplitManifest};
use serde::{Deserialize, Serialize};

use crate::error::{IoContext, LabError, Result};
use crate::imageio::{read_png, write_png};
use crate::ingest::{index_dataset, load_scene, SkippedScene};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SPLIT_FILE: &str = "split.json";
pub const CROPS_DIR: &str = "crops";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestLine {
    pub uid: String,
    pub scene_id: String,
    pub label: u8,
    pub disaster_type: String,
    pub bbox_area: u64,
    pub split: String,
    pub pre_path: String,
    pub post_path: String,
}

/// Split parameters stored next to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub seed: u64,
    pub ratio: f64,
    pub checksum: String,
    pub train: usize,
    pub val: usize,
}

fn check_uid(uid: &str) -> Result<()> {
    if uid.is_empty() || uid.contains(['/', '\\']) || uid == "." || uid == ".." {
        return Err(LabError::MalformedLabelFile(format!("uid `{uid}` cannot name a file")));
    }
    Ok(())
}

/// Writes the records referenced by `split` under `out_dir`: two PNGs per
/// record and one manifest line each, train side first.
pub fn write_manifest(split: &SplitManifest, records: &[BuildingRecord], out_dir: &Path) -> Result<()> {
    let mut seen = BTreeSet::new();
    for &i in split.train.iter().chain(&split.val) {
        let r = records.get(i).ok_or_else(|| Error::InvalidParams(format!("split index {i} out of range")))?;
        check_uid(&r.uid)?;
        if !seen.insert(r.uid.as_str()) {
            return Err(Error::DuplicateUid(r.uid.clone()).into());
        }
    }
    std::fs::create_dir_all(out_dir).at(out_dir)?;
    let path = out_dir.join(MANIFEST_FILE);
    let mut w = BufWriter::new(File::create(&path).at(&path)?);
    for (side, idx) in [("train", &split.train), ("val", &split.val)] {
        for &i in idx {
            let r = &records[i];
            let pre_path = format!("{CROPS_DIR}/{}_pre.png", r.uid);
            let post_path = format!("{CROPS_DIR}/{}_post.png", r.uid);
            write_png(&out_dir.join(&pre_path), &r.crop_pre)?;
            write_png(&out_dir.join(&post_path), &r.crop_post)?;
            let line = ManifestLine {
                uid: r.uid.clone(),
                scene_id: r.scene_id.clone(),
                label: r.label.ordinal(),
                disaster_type: r.disaster_type.tag().into(),
                bbox_area: r.bbox_area,
                split: side.into(),
                pre_path,
                post_path,
            };
            serde_json::to_writer(&mut w, &line).expect("manifest line serialises");
            w.write_all(b"\n").at(&path)?;
        }
    }
    w.flush().at(&path)?;
    let info = SplitInfo {
        seed: split.seed,
        ratio: split.ratio,
        checksum: split.checksum(records),
        train: split.train.len(),
        val: split.val.len(),
    };
    write_json(&out_dir.join(SPLIT_FILE), &info)
}

/// Records in manifest order and the split over them.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedManifest {
    pub dir: PathBuf,
    pub records: Vec<BuildingRecord>,
    pub split: SplitManifest,
}

impl LoadedManifest {
    pub fn val_records(&self) -> Vec<&BuildingRecord> {
        self.split.val.iter().map(|&i| &self.records[i]).collect()
    }

    /// Side of the stored crops; all crops of one manifest share it.
    pub fn crop_side(&self) -> Option<usize> {
        self.records.first().map(|r| r.crop_post.width())
    }
}

pub fn read_manifest(dir: &Path) -> Result<LoadedManifest> {
    let path = dir.join(MANIFEST_FILE);
    let reader = BufReader::new(File::open(&path).at(&path)?);
    let mut records = Vec::new();
    let mut split =
        SplitManifest { train: Vec::new(), val: Vec::new(), seed: 0, ratio: damage_core::preprocess::DEFAULT_SPLIT_RATIO };
    for (n, line) in reader.lines().enumerate() {
        let line = line.at(&path)?;
        if line.trim().is_empty() {
            continue;
        }
        let m: ManifestLine = serde_json::from_str(&line).map_err(|e| LabError::format(&path, format!("line {}: {e}", n + 1)))?;
        let idx = records.len();
        match m.split.as_str() {
            "train" => split.train.push(idx),
            "val" => split.val.push(idx),
            other => return Err(LabError::format(&path, format!("line {}: unknown split `{other}`", n + 1))),
        }
        let label = DamageClass::new(m.label)?;
        records.push(BuildingRecord {
            crop_pre: read_png(&dir.join(&m.pre_path))?,
            crop_post: read_png(&dir.join(&m.post_path))?,
            label,
            disaster_type: m.disaster_type.parse()?,
            bbox_area: m.bbox_area,
            scene_id: m.scene_id,
            uid: m.uid,
        });
    }
    let info_path = dir.join(SPLIT_FILE);
    if info_path.exists() {
        let info: SplitInfo = read_json(&info_path)?;
        split.seed = info.seed;
        split.ratio = info.ratio;
    }
    Ok(LoadedManifest { dir: dir.to_path_buf(), records, split })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("value serialises");
    text.push('\n');
    std::fs::write(path, text).at(path)
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).at(path)?;
    serde_json::from_slice(&bytes).map_err(|e| LabError::format(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreprocessOptions {
    pub crop: CropOptions,
    pub ratio: f64,
    pub seed: u64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self { crop: CropOptions::default(), ratio: damage_core::preprocess::DEFAULT_SPLIT_RATIO, seed: 0 }
    }
}

/// Result of turning a dataset root into a split.
#[derive(Clone, Debug)]
pub struct PreprocessOutcome {
    pub records: Vec<BuildingRecord>,
    pub split: SplitManifest,
    pub skipped: Vec<SkippedScene>,
    /// Buildings in the label files, before filtering.
    pub parsed: usize,
    /// Box area of every parsed footprint with a valid box, for the size
    /// histogram.
    pub areas: Vec<u64>,
}

/// Loads scenes one at a time, filters and crops their buildings, then
/// splits the pooled records.
pub fn preprocess_root(root: &Path, opts: &PreprocessOptions) -> Result<PreprocessOutcome> {
    let index = index_dataset(root)?;
    let mut records = Vec::new();
    let mut parsed = 0;
    let mut areas = Vec::new();
    for files in &index.scenes {
        let scene = load_scene(files)?;
        parsed += scene.annotations.len();
        areas.extend(scene.annotations.iter().filter_map(|a| polygon_bbox(&a.polygon).ok()).map(|b| b.area()));
        let kept = extract_records(&scene, &opts.crop);
        log::debug!("{}: {} of {} buildings kept", scene.scene_id, kept.len(), scene.annotations.len());
        records.extend(kept);
    }
    let split = balanced_split(&records, opts.ratio, opts.seed)?;
    Ok(PreprocessOutcome { records, split, skipped: index.skipped, parsed, areas })
}

/// Counts of box areas in power-of-two bins `[2^k, 2^(k+1))`, smallest bin
/// first; the filter threshold sits inside the `[1024, 2048)` bin.
pub fn area_histogram(areas: &[u64]) -> Vec<(u64, u64, usize)> {
    let mut bins: Vec<(u64, u64, usize)> = Vec::new();
    for &a in areas {
        let k = 63 - a.max(1).leading_zeros() as u64;
        let lo = 1u64 << k;
        match bins.iter_mut().find(|b| b.0 == lo) {
            Some(b) => b.2 += 1,
            None => bins.push((lo, lo.saturating_mul(2), 1)),
        }
    }
    bins.sort();
    bins
}
