//! xBD-style dataset roots: label-file parsing and scene enumeration.
//!
//! Layout:
//!
//! ```text
//! <root>/images/<scene_id>_pre_disaster.png
//! <root>/images/<scene_id>_post_disaster.png
//! <root>/labels/<scene_id>_post_disaster.json
//! ```
//!
//! Polygons and damage subtypes come from the post-event label file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use damage_core::class::UNCLASSIFIED;
use damage_core::{BuildingAnnotation, DamageClass, DisasterType, Error, Point, ScenePair};
use serde::{Deserialize, Serialize};
use wkt::Wkt;

use crate::error::{IoContext, LabError, Result};
use crate::imageio::read_png;

pub const PRE_SUFFIX: &str = "_pre_disaster.png";
pub const POST_SUFFIX: &str = "_post_disaster.png";
pub const LABEL_SUFFIX: &str = "_post_disaster.json";

/// Subtype string used by label files for unassessed buildings.
pub const FILE_UNCLASSIFIED: &str = "un-classified";

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelFile {
    pub features: Features,
    pub metadata: Metadata,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Features {
    #[serde(default)]
    pub xy: Vec<Feature>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Feature {
    pub wkt: String,
    pub properties: Properties,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Properties {
    pub feature_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtype: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uid: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Metadata {
    pub disaster_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub img_name: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedLabels {
    pub annotations: Vec<BuildingAnnotation>,
    pub disaster_type: DisasterType,
    /// From `metadata.img_name` when present, otherwise empty.
    pub scene_id: String,
}

/// Vertices of a WKT polygon's outer ring without the closing repeat.
pub fn parse_polygon(text: &str) -> Result<Vec<Point>> {
    let geom = Wkt::<f64>::from_str(text).map_err(|e| LabError::MalformedLabelFile(format!("bad WKT `{text}`: {e}")))?;
    let Wkt::Polygon(poly) = geom else {
        return Err(LabError::MalformedLabelFile(format!("expected POLYGON, got `{text}`")));
    };
    let ring = poly.0.into_iter().next().map(|r| r.0).unwrap_or_default();
    let mut pts: Vec<Point> = ring.iter().map(|c| Point { x: c.x, y: c.y }).collect();
    if pts.len() > 1 && pts.first() == pts.last() {
        pts.pop();
    }
    if pts.len() < 3 {
        return Err(Error::InvalidPolygon(format!("{} distinct vertices, need at least 3", pts.len())).into());
    }
    Ok(pts)
}

fn raw_label(subtype: &str) -> Result<String> {
    if subtype == FILE_UNCLASSIFIED || subtype == UNCLASSIFIED {
        return Ok(UNCLASSIFIED.into());
    }
    DamageClass::from_subtype(subtype)
        .map(|c| c.subtype().to_string())
        .ok_or_else(|| LabError::MalformedLabelFile(format!("unknown subtype `{subtype}`")))
}

/// Parses one post-event label file. Only `building` features become
/// annotations. Buildings without a `uid` get `<scene_id>-<index>`.
pub fn parse_label_file(bytes: &[u8]) -> Result<ParsedLabels> {
    let file: LabelFile = serde_json::from_slice(bytes).map_err(|e| LabError::MalformedLabelFile(e.to_string()))?;
    let disaster_type: DisasterType = file.metadata.disaster_type.parse()?;
    let scene_id =
        file.metadata.img_name.as_deref().map(|n| n.strip_suffix(POST_SUFFIX).unwrap_or(n).to_string()).unwrap_or_default();
    let mut annotations = Vec::new();
    for (i, f) in file.features.xy.iter().enumerate() {
        if f.properties.feature_type != "building" {
            continue;
        }
        let subtype = f
            .properties
            .subtype
            .as_deref()
            .ok_or_else(|| LabError::MalformedLabelFile(format!("building {i} has no subtype")))?;
        let uid = f.properties.uid.clone().unwrap_or_else(|| format!("{scene_id}-{i}"));
        annotations.push(BuildingAnnotation::new(parse_polygon(&f.wkt)?, raw_label(subtype)?, uid)?);
    }
    Ok(ParsedLabels { annotations, disaster_type, scene_id })
}

/// Paths of one complete scene.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SceneFiles {
    pub scene_id: String,
    pub pre: PathBuf,
    pub post: PathBuf,
    pub label: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SkippedScene {
    pub scene_id: String,
    pub missing: Vec<&'static str>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub scenes: Vec<SceneFiles>,
    pub skipped: Vec<SkippedScene>,
}

fn ids_with_suffix(dir: &Path, suffix: &str) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in std::fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        if let Some(id) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(suffix)) {
            out.insert(id.to_string(), path.clone());
        }
    }
    Ok(out)
}

/// Joins images and labels by scene id, in sorted id order. Scenes missing
/// any of their three files are reported in `skipped`.
pub fn index_dataset(root: &Path) -> Result<DatasetIndex> {
    let images = root.join("images");
    let pre = ids_with_suffix(&images, PRE_SUFFIX)?;
    let post = ids_with_suffix(&images, POST_SUFFIX)?;
    let labels = ids_with_suffix(&root.join("labels"), LABEL_SUFFIX)?;
    let mut ids: Vec<&String> = pre.keys().chain(post.keys()).chain(labels.keys()).collect();
    ids.sort();
    ids.dedup();
    let mut index = DatasetIndex { root: root.to_path_buf(), ..Default::default() };
    for id in ids {
        match (pre.get(id), post.get(id), labels.get(id)) {
            (Some(a), Some(b), Some(c)) => {
                index.scenes.push(SceneFiles { scene_id: id.clone(), pre: a.clone(), post: b.clone(), label: c.clone() })
            }
            (a, b, c) => {
                let missing = [(a.is_none(), "pre image"), (b.is_none(), "post image"), (c.is_none(), "label file")]
                    .into_iter()
                    .filter_map(|(m, what)| m.then_some(what))
                    .collect();
                log::warn!("skipping scene {id}: missing {missing:?}");
                index.skipped.push(SkippedScene { scene_id: id.clone(), missing });
            }
        }
    }
    if index.scenes.is_empty() {
        return Err(LabError::EmptyDataset(root.to_path_buf()));
    }
    Ok(index)
}

/// Reads one scene's label file only.
pub fn load_labels(files: &SceneFiles) -> Result<ParsedLabels> {
    let bytes = std::fs::read(&files.label).at(&files.label)?;
    parse_label_file(&bytes).map_err(|e| match e {
        LabError::MalformedLabelFile(msg) => LabError::MalformedLabelFile(format!("{}: {msg}", files.label.display())),
        other => other,
    })
}

pub fn load_scene(files: &SceneFiles) -> Result<ScenePair> {
    let labels = load_labels(files)?;
    let pre = read_png(&files.pre)?;
    let post = read_png(&files.post)?;
    Ok(ScenePair::new(files.scene_id.clone(), pre, post, labels.annotations, labels.disaster_type)?)
}

/// Every complete scene under `root`, loaded into memory, plus the skip
/// report.
pub fn enumerate_scene_pairs(root: &Path) -> Result<(Vec<ScenePair>, Vec<SkippedScene>)> {
    let index = index_dataset(root)?;
    let scenes = index.scenes.iter().map(load_scene).collect::<Result<Vec<_>>>()?;
    Ok((scenes, index.skipped))
}

/// Label-file JSON for a scene, in the layout [`parse_label_file`] reads.
pub fn render_label_file(scene_id: &str, disaster_type: DisasterType, buildings: &[(Vec<Point>, &str, &str)]) -> String {
    let xy = buildings
        .iter()
        .map(|(poly, label, uid)| {
            let mut ring: Vec<String> = poly.iter().map(|p| format!("{} {}", p.x, p.y)).collect();
            if let Some(first) = ring.first().cloned() {
                ring.push(first);
            }
            let subtype = if *label == UNCLASSIFIED { FILE_UNCLASSIFIED } else { label };
            Feature {
                wkt: format!("POLYGON (({}))", ring.join(", ")),
                properties: Properties {
                    feature_type: "building".into(),
                    subtype: Some(subtype.to_string()),
                    uid: Some(uid.to_string()),
                },
            }
        })
        .collect();
    let file = LabelFile {
        features: Features { xy },
        metadata: Metadata { disaster_type: disaster_type.tag().into(), img_name: Some(format!("{scene_id}{POST_SUFFIX}")) },
    };
    serde_json::to_string_pretty(&file).expect("label file serialises")
}
