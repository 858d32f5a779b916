//! Run config files: TOML key-value pairs holding the model config and the
//! training hyperparameters.
//!
//! ```toml
//! modality = "pre_post"
//! loss = "ordinal"
//! backbone = "tiny_resnet"
//! crop_side = 32
//! ordinal_decode = "scan"
//! learning_rate = 0.001
//! batch_size = 32
//! epochs = 100
//! seed = 0
//! ```
//!
//! Every key is optional. A missing `crop_side` is taken from the manifest.

use std::path::Path;

use damage_core::{HyperParams, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::error::{IoContext, LabError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunFile {
    pub modality: String,
    pub loss: String,
    pub backbone: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crop_side: Option<usize>,
    /// Normally implied by `loss`; a conflicting value is rejected.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_width: Option<usize>,
    pub ordinal_decode: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for RunFile {
    fn default() -> Self {
        let hp = HyperParams::default();
        Self {
            modality: "post_only".into(),
            loss: "ce".into(),
            backbone: "tiny_resnet".into(),
            crop_side: None,
            head_width: None,
            ordinal_decode: "scan".into(),
            learning_rate: hp.learning_rate,
            batch_size: hp.batch_size,
            epochs: hp.epochs,
            seed: hp.seed,
        }
    }
}

impl RunFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LabError::Core(damage_core::Error::InvalidParams(format!("config file: {e}"))))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        toml::from_str(&text).map_err(|e| LabError::format(path, e))
    }

    pub fn from_parts(config: &ModelConfig, hp: &HyperParams) -> Self {
        Self {
            modality: config.modality.tag().into(),
            loss: config.loss.tag().into(),
            backbone: config.backbone.tag().into(),
            crop_side: Some(config.crop_side),
            head_width: Some(config.head_width),
            ordinal_decode: config.ordinal_decode.tag().into(),
            learning_rate: hp.learning_rate,
            batch_size: hp.batch_size,
            epochs: hp.epochs,
            seed: hp.seed,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run file serialises")
    }

    /// Model config, with `default_side` filling a missing crop side.
    pub fn model_config(&self, default_side: Option<usize>) -> Result<ModelConfig> {
        let crop_side = self
            .crop_side
            .or(default_side)
            .ok_or_else(|| damage_core::Error::InvalidParams("crop_side missing and not derivable from the manifest".into()))?;
        let mut config = ModelConfig::new(self.modality.parse()?, self.loss.parse()?, self.backbone.parse()?, crop_side);
        config.ordinal_decode = self.ordinal_decode.parse()?;
        if let Some(w) = self.head_width {
            config.head_width = w;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn hyper_params(&self) -> Result<HyperParams> {
        let hp =
            HyperParams { learning_rate: self.learning_rate, batch_size: self.batch_size, epochs: self.epochs, seed: self.seed };
        hp.validate()?;
        Ok(hp)
    }
}
