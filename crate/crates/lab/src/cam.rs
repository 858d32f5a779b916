//! Grad-CAM panels for a set of building records.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use damage_core::gradcam::{grad_cam, overlay};
use damage_core::{encode_input, BuildingRecord, Error, Model, RgbImage};

use crate::error::Result;
use crate::imageio::write_png;

pub const CONTACT_SHEET: &str = "contact_sheet.png";
pub const DEFAULT_ALPHA: f32 = 0.5;
const EMPTY_CELL: [u8; 3] = [32, 32, 32];

/// Which class each map explains.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ClassFrom {
    Label,
    #[default]
    Prediction,
}

impl FromStr for ClassFrom {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "label" => Ok(Self::Label),
            "prediction" => Ok(Self::Prediction),
            other => Err(Error::InvalidParams(format!("unknown class source `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CamOptions {
    /// Feature map to explain; the last one when `None`.
    pub layer: Option<String>,
    pub alpha: f32,
    pub class_from: ClassFrom,
}

impl Default for CamOptions {
    fn default() -> Self {
        Self { layer: None, alpha: DEFAULT_ALPHA, class_from: ClassFrom::default() }
    }
}

fn paste(dst: &mut RgbImage, src: &RgbImage, x0: usize, y0: usize) {
    for y in 0..src.height() {
        for x in 0..src.width() {
            dst.put_pixel(x0 + x, y0 + y, src.pixel(x, y));
        }
    }
}

/// Post-event crop above its overlay.
pub fn panel(crop: &RgbImage, over: &RgbImage) -> RgbImage {
    let (w, h) = (crop.width(), crop.height());
    let mut out = RgbImage::new(w, 2 * h);
    paste(&mut out, crop, 0, 0);
    paste(&mut out, over, 0, h);
    out
}

/// Writes `<uid>_cam.png` for every record and a contact sheet holding the
/// first panel of each class, left to right from no damage to destroyed.
/// Returns the written paths, panels first.
pub fn cam_batch(model: &mut Model, records: &[&BuildingRecord], out_dir: &Path, opts: &CamOptions) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::EmptyEvalSet.into());
    }
    let layer = opts.layer.clone().unwrap_or_else(|| model.last_conv_layer());
    model.layer_index(&layer)?;
    let modality = model.config().modality;
    let side = records[0].crop_post.width();
    let mut written = Vec::with_capacity(records.len() + 1);
    let mut sheet_cells: [Option<RgbImage>; 4] = Default::default();
    for r in records {
        let input = encode_input(r, modality)?;
        let target = match opts.class_from {
            ClassFrom::Label => r.label,
            ClassFrom::Prediction => model.predict(&[&input])?[0],
        };
        let cam = grad_cam(model, &input, target, &layer)?;
        let p = panel(&r.crop_post, &overlay(&cam, &r.crop_post, opts.alpha)?);
        let path = out_dir.join(format!("{}_cam.png", r.uid));
        write_png(&path, &p)?;
        written.push(path);
        let slot = &mut sheet_cells[r.label.index()];
        if slot.is_none() && p.width() == side {
            *slot = Some(p);
        }
    }
    let mut sheet = RgbImage::filled(4 * side, 2 * side, EMPTY_CELL);
    for (c, cell) in sheet_cells.iter().enumerate() {
        if let Some(p) = cell {
            paste(&mut sheet, p, c * side, 0);
        }
    }
    let path = out_dir.join(CONTACT_SHEET);
    write_png(&path, &sheet)?;
    written.push(path);
    log::info!("rendered {} maps at layer {layer}", records.len());
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use damage_core::{build_model, BackboneKind, DamageClass, DisasterType, InputModality, LossKind, ModelConfig};

    fn record(uid: &str, label: u8) -> BuildingRecord {
        let mut post = RgbImage::new(16, 16);
        for y in 0..16 {
            for x in 0..16 {
                post.put_pixel(x, y, [(x * 16) as u8, (y * 16) as u8, label * 60]);
            }
        }
        BuildingRecord {
            crop_pre: RgbImage::filled(16, 16, [90, 90, 90]),
            crop_post: post,
            label: DamageClass::new(label).unwrap(),
            disaster_type: DisasterType::Fire,
            bbox_area: 4000,
            scene_id: "s".into(),
            uid: uid.into(),
        }
    }

    #[test]
    fn four_panels_and_a_sheet_reproducibly() {
        let cfg = ModelConfig::new(InputModality::PrePostType, LossKind::OrdinalCrossEntropy, BackboneKind::TinyResnet, 16);
        let recs: Vec<_> = (0..4).map(|c| record(&format!("r{c}"), c)).collect();
        let refs: Vec<_> = recs.iter().collect();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let opts = CamOptions { class_from: ClassFrom::Label, ..Default::default() };
        let pa = cam_batch(&mut build_model(&cfg, None, 2).unwrap(), &refs, a.path(), &opts).unwrap();
        let pb = cam_batch(&mut build_model(&cfg, None, 2).unwrap(), &refs, b.path(), &opts).unwrap();
        assert_eq!(pa.len(), 5);
        assert!(pa[..4].iter().all(|p| p.to_str().unwrap().ends_with("_cam.png")));
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
    }

    #[test]
    fn empty_and_unknown_layer() {
        let cfg = ModelConfig::new(InputModality::PostOnly, LossKind::CrossEntropy, BackboneKind::TinyResnet, 16);
        let mut m = build_model(&cfg, None, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(cam_batch(&mut m, &[], dir.path(), &CamOptions::default()).unwrap_err().name(), "EmptyEvalSet");
        let r = record("x", 1);
        let opts = CamOptions { layer: Some("layer9".into()), ..Default::default() };
        assert_eq!(cam_batch(&mut m, &[&r], dir.path(), &opts).unwrap_err().name(), "UnknownLayer");
    }
}
