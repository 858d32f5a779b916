//! JSON forms of training reports, grids and evaluations, and the run
//! metadata file written by every subcommand.

use std::path::Path;

use damage_core::train::{ComparisonGrid, Evaluation, TrainRunReport};
use serde::{Deserialize, Serialize};

use crate::config::RunFile;
use crate::error::Result;
use crate::manifest::write_json;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochJson {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub config: RunFile,
    pub config_hash: String,
    pub seed: u64,
    pub split_checksum: String,
    pub train_size: usize,
    pub val_size: usize,
    pub per_epoch: Vec<EpochJson>,
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    pub final_val_accuracy: f64,
    /// `[truth][prediction]` counts for the best checkpoint.
    pub confusion: [[u64; 4]; 4],
    pub checkpoint_digest: String,
}

impl From<&TrainRunReport> for ReportJson {
    fn from(r: &TrainRunReport) -> Self {
        Self {
            config: RunFile::from_parts(&r.config, &r.hyper_params),
            config_hash: r.config_hash.clone(),
            seed: r.seed,
            split_checksum: r.split_checksum.clone(),
            train_size: r.train_size,
            val_size: r.val_size,
            per_epoch: r
                .per_epoch
                .iter()
                .map(|e| EpochJson { epoch: e.epoch, train_loss: e.train_loss, val_accuracy: e.val_accuracy })
                .collect(),
            best_val_accuracy: r.best_val_accuracy,
            best_epoch: r.best_epoch,
            final_val_accuracy: r.final_val_accuracy,
            confusion: r.confusion,
            checkpoint_digest: r.checkpoint_digest.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCellJson {
    pub modality: String,
    pub loss: String,
    pub report: ReportJson,
}

pub fn grid_json(grid: &ComparisonGrid) -> Vec<GridCellJson> {
    grid.cells
        .iter()
        .map(|c| GridCellJson { modality: c.modality.tag().into(), loss: c.loss.tag().into(), report: (&c.report).into() })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationJson {
    pub config: String,
    pub records: u64,
    pub accuracy: f64,
    pub confusion: [[u64; 4]; 4],
}

impl EvaluationJson {
    pub fn new(config: &damage_core::ModelConfig, e: &Evaluation) -> Self {
        Self { config: config.canonical(), records: e.total(), accuracy: e.accuracy, confusion: e.confusion }
    }
}

pub fn write_report(path: &Path, report: &TrainRunReport) -> Result<()> {
    write_json(path, &ReportJson::from(report))
}

pub const RUN_META_FILE: &str = "run_meta.json";

/// Everything needed to replay a run. `started_unix` is informational and
/// no determinism check reads it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub settings: serde_json::Value,
    pub started_unix: u64,
}

impl RunMeta {
    pub fn new(subcommand: &str, argv: &[String], seed: u64, settings: serde_json::Value) -> Self {
        let started_unix = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            argv: argv.to_vec(),
            seed,
            settings,
            started_unix,
        }
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        write_json(&out_dir.join(RUN_META_FILE), self)
    }
}
