//! Building-damage classification from pre/post-event satellite crops.
//!
//! This crate holds the pure parts of the pipeline and needs only `alloc`:
//!
//! * [`class`], [`geom`], [`scene`]: labels, footprints and scene records,
//! * [`raster`], [`preprocess`]: cropping, filtering and balanced splits,
//! * [`losses`]: cross-entropy, squared-error and ordinal criteria,
//! * [`nn`], [`model`], [`optim`]: residual classifiers with explicit
//!   backward passes and Adam,
//! * [`train`]: seeded training, evaluation and the comparison grid,
//! * [`gradcam`]: class activation maps and overlays,
//! * [`synth`]: synthetic scenes with controllable damage.
//!
//! File formats, image codecs and the command line live in `damage-lab`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod class;
pub mod error;
pub mod geom;
pub mod gradcam;
pub mod losses;
pub mod model;
pub mod nn;
pub mod optim;
pub mod preprocess;
pub mod raster;
pub mod scene;
pub mod synth;
pub mod train;

pub use class::{DamageClass, DisasterType};
pub use error::{Error, Result};
pub use geom::{polygon_bbox, BBox, Point};
pub use losses::{LossKind, OrdinalDecode};
pub use model::{build_model, encode_input, BackboneKind, EncodedInput, InputModality, Model, ModelConfig, WeightSet};
pub use preprocess::{balanced_split, filter_buildings, BuildingRecord, CropOptions, SplitManifest};
pub use raster::RgbImage;
pub use scene::{BuildingAnnotation, ScenePair};
pub use train::{evaluate, train, Classifier, ComparisonGrid, HyperParams, TrainRunReport};
