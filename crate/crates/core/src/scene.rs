//! In-memory scene records: a pre/post image pair plus building footprints.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::class::{DamageClass, DisasterType, UNCLASSIFIED};
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::raster::RgbImage;

/// One building footprint from a label file.
#[derive(Clone, Debug, PartialEq)]
pub struct BuildingAnnotation {
    pub polygon: Vec<Point>,
    /// Label as read, normalised only for the unassessed case
    /// (`"unclassified"`).
    pub raw_label: String,
    pub uid: String,
}

impl BuildingAnnotation {
    pub fn new(polygon: Vec<Point>, raw_label: impl Into<String>, uid: impl Into<String>) -> Result<Self> {
        if polygon.len() < 3 {
            return Err(Error::InvalidPolygon(format!("{} vertices, need at least 3", polygon.len())));
        }
        Ok(Self { polygon, raw_label: raw_label.into(), uid: uid.into() })
    }

    pub fn is_unclassified(&self) -> bool {
        self.raw_label == UNCLASSIFIED
    }

    /// Damage class, or `None` for unclassified or unknown labels.
    pub fn damage_class(&self) -> Option<DamageClass> {
        DamageClass::from_subtype(&self.raw_label)
    }
}

/// Co-registered pre- and post-event rasters with the post-event footprints.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePair {
    pub scene_id: String,
    pub pre_image: RgbImage,
    pub post_image: RgbImage,
    pub annotations: Vec<BuildingAnnotation>,
    pub disaster_type: DisasterType,
}

impl ScenePair {
    pub fn new(
        scene_id: impl Into<String>,
        pre_image: RgbImage,
        post_image: RgbImage,
        annotations: Vec<BuildingAnnotation>,
        disaster_type: DisasterType,
    ) -> Result<Self> {
        if pre_image.width() != post_image.width() || pre_image.height() != post_image.height() {
            return Err(Error::ShapeMismatch(format!(
                "pre {}x{} vs post {}x{}",
                pre_image.width(),
                pre_image.height(),
                post_image.width(),
                post_image.height()
            )));
        }
        Ok(Self { scene_id: scene_id.into(), pre_image, post_image, annotations, disaster_type })
    }
}
