//! Synthetic dataset roots on disk.

use std::path::Path;

use damage_core::geom::rect_polygon;
use damage_core::synth::{generate_scene, mean_abs_difference, plan_labels, SeparabilityReport, SynthParams};
use damage_core::{polygon_bbox, BBox};
use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result};
use crate::imageio::write_png;
use crate::ingest::{index_dataset, load_scene, render_label_file, LABEL_SUFFIX, POST_SUFFIX, PRE_SUFFIX};
use crate::manifest::write_json;

/// Box log written next to the generated scenes, one entry per building.
pub const BOX_LOG_FILE: &str = "synth_log.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoggedBuilding {
    pub uid: String,
    pub scene_id: String,
    pub disaster_type: String,
    pub label: u8,
    pub bbox: [i64; 4],
    pub area: u64,
}

impl LoggedBuilding {
    pub fn bbox(&self) -> BBox {
        let [x0, y0, x1, y1] = self.bbox;
        BBox { x_min: x0, y_min: y0, x_max: x1, y_max: y1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxLog {
    pub seed: u64,
    pub n_scenes: usize,
    pub buildings_per_scene: usize,
    pub image_side: usize,
    pub class_mix: [f64; 4],
    pub buildings: Vec<LoggedBuilding>,
}

/// Renders every scene of `params` into the ingest layout under `out`, one
/// scene at a time, and writes the box log. Returns the log.
pub fn write_synth_root(params: &SynthParams, out: &Path) -> Result<BoxLog> {
    params.validate()?;
    let labels = plan_labels(params);
    let per = params.buildings_per_scene;
    let (images, label_dir) = (out.join("images"), out.join("labels"));
    std::fs::create_dir_all(&images).at(&images)?;
    std::fs::create_dir_all(&label_dir).at(&label_dir)?;
    let mut buildings = Vec::with_capacity(labels.len());
    for i in 0..params.n_scenes {
        let scene = generate_scene(params, i, &labels[i * per..(i + 1) * per])?;
        let id = &scene.scene_id;
        write_png(&images.join(format!("{id}{PRE_SUFFIX}")), &scene.pre)?;
        write_png(&images.join(format!("{id}{POST_SUFFIX}")), &scene.post)?;
        let feats: Vec<_> = scene.buildings.iter().map(|b| (rect_polygon(&b.bbox), b.label.subtype(), b.uid.as_str())).collect();
        let label_path = label_dir.join(format!("{id}{LABEL_SUFFIX}"));
        std::fs::write(&label_path, render_label_file(id, scene.disaster_type, &feats)).at(&label_path)?;
        buildings.extend(scene.buildings.iter().map(|b| LoggedBuilding {
            uid: b.uid.clone(),
            scene_id: id.clone(),
            disaster_type: scene.disaster_type.tag().into(),
            label: b.label.ordinal(),
            bbox: [b.bbox.x_min, b.bbox.y_min, b.bbox.x_max, b.bbox.y_max],
            area: b.bbox.area(),
        }));
        log::info!("wrote scene {id} ({} buildings)", scene.buildings.len());
    }
    let log = BoxLog {
        seed: params.seed,
        n_scenes: params.n_scenes,
        buildings_per_scene: per,
        image_side: params.image_side,
        class_mix: params.class_mix,
        buildings,
    };
    write_json(&out.join(BOX_LOG_FILE), &log)?;
    Ok(log)
}

/// Mean absolute pre/post difference per class, recomputed from the images
/// and label files stored under `root`.
pub fn separability_report(root: &Path) -> Result<SeparabilityReport> {
    let index = index_dataset(root)?;
    let mut items = Vec::new();
    for files in &index.scenes {
        let scene = load_scene(files)?;
        for a in &scene.annotations {
            let Some(class) = a.damage_class() else { continue };
            let bbox = polygon_bbox(&a.polygon)?;
            items.push((class, mean_abs_difference(&scene.pre_image, &scene.post_image, &bbox)?));
        }
    }
    Ok(SeparabilityReport::accumulate(items))
}
