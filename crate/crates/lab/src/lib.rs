//! File formats, dataset IO and the command line around `damage-core`.
//!
//! * [`ingest`]: xBD-style label files and dataset roots,
//! * [`manifest`]: the preprocessing pipeline and `manifest.jsonl` splits,
//! * [`synthio`]: synthetic roots on disk and their separability check,
//! * [`checkpoint`]: safetensors checkpoints and pretrained weights,
//! * [`config`], [`report`]: run config files and JSON outputs,
//! * [`cam`]: Grad-CAM panels and contact sheets,
//! * [`cli`]: the `damage-lab` subcommands.

pub mod cam;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod imageio;
pub mod ingest;
pub mod manifest;
pub mod report;
pub mod synthio;

pub use error::{LabError, Result};
