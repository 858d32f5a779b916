//! Model checkpoints and pretrained weight files, both as safetensors.
//!
//! A checkpoint carries every parameter and running statistic plus the
//! model config in the header metadata (`config`, `config_hash`). Loading
//! into a different config is refused.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use damage_core::{build_model, BackboneKind, Error, Model, ModelConfig, WeightSet};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::error::{IoContext, LabError, Result};

pub const FORMAT_TAG: &str = "damage-lab/checkpoint-v1";
/// Environment variable naming the directory searched for pretrained
/// weight files.
pub const CACHE_ENV: &str = "DAMAGE_LAB_CACHE";
pub const PRETRAINED_FILE: &str = "resnet18.safetensors";
/// The header metadata map is written in hash order, so all entries travel
/// as one sorted JSON object under this single key.
const META_KEY: &str = "damage_lab";

fn to_bytes(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Serialises `ws` with string metadata. Tensors and metadata are written
/// in name order, so equal inputs give equal bytes.
pub fn encode_weights(ws: &WeightSet, metadata: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let bytes: Vec<(&String, &Vec<usize>, Vec<u8>)> =
        ws.tensors.iter().map(|(name, (shape, data))| (name, shape, to_bytes(data))).collect();
    let views = bytes
        .iter()
        .map(|(name, shape, b)| {
            TensorView::new(Dtype::F32, (*shape).clone(), b)
                .map(|v| (name.as_str(), v))
                .map_err(|e| Error::WeightLoadFailure(format!("{name}: {e}")))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let header = HashMap::from([(META_KEY.to_string(), serde_json::to_string(metadata).expect("string map serialises"))]);
    safetensors::serialize(views, &Some(header)).map_err(|e| Error::WeightLoadFailure(e.to_string()).into())
}

/// Reads float tensors from safetensors bytes. Integer tensors named
/// `*num_batches_tracked` are counters from other frameworks and skipped.
pub fn decode_weights(bytes: &[u8]) -> Result<(WeightSet, BTreeMap<String, String>)> {
    let fail = |e: &dyn std::fmt::Display| LabError::Core(Error::WeightLoadFailure(e.to_string()));
    let (_, meta) = SafeTensors::read_metadata(bytes).map_err(|e| fail(&e))?;
    let raw_meta = meta.metadata().clone().unwrap_or_default();
    let metadata = match raw_meta.get(META_KEY) {
        Some(text) => serde_json::from_str(text).map_err(|e| fail(&e))?,
        None => raw_meta.into_iter().collect(),
    };
    let st = SafeTensors::deserialize(bytes).map_err(|e| fail(&e))?;
    let mut ws = WeightSet::default();
    for (name, view) in st.tensors() {
        let raw = view.data();
        let data: Vec<f32> = match view.dtype() {
            Dtype::F32 => raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
            Dtype::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")) as f32).collect(),
            _ if name.ends_with("num_batches_tracked") => continue,
            other => return Err(fail(&format!("tensor `{name}` has unsupported dtype {other:?}"))),
        };
        ws.insert(name, view.shape().to_vec(), data);
    }
    Ok((ws, metadata))
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub weights: WeightSet,
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    /// Rebuilds the model, refusing when `expected` is given and differs
    /// from the stored config.
    pub fn into_model(self, expected: Option<&ModelConfig>) -> Result<Model> {
        if let Some(want) = expected {
            if want != &self.config {
                return Err(Error::ConfigMismatch(format!(
                    "checkpoint holds `{}`, run needs `{}`",
                    self.config.canonical(),
                    want.canonical()
                ))
                .into());
            }
        }
        let init = match self.config.backbone {
            BackboneKind::TinyResnet => None,
            BackboneKind::Resnet18Pretrained => Some(&self.weights),
        };
        let mut model = build_model(&self.config, init, 0)?;
        model.load_weights(&self.weights, true)?;
        Ok(model)
    }
}

/// Checkpoint bytes for `model`; `extra` entries join the header metadata.
pub fn encode_checkpoint(model: &mut Model, extra: &[(&str, String)]) -> Result<Vec<u8>> {
    let config = model.config().clone();
    let mut meta: BTreeMap<String, String> = extra.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    meta.insert("format".into(), FORMAT_TAG.into());
    meta.insert("config".into(), config.canonical());
    meta.insert("config_hash".into(), config.hash());
    encode_weights(&model.export_weights(), &meta)
}

pub fn save_checkpoint(path: &Path, model: &mut Model, extra: &[(&str, String)]) -> Result<()> {
    let bytes = encode_checkpoint(model, extra)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    std::fs::write(path, bytes).at(path)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let (weights, metadata) = decode_weights(bytes)?;
    let text = metadata.get("config").ok_or_else(|| Error::WeightLoadFailure("no model config in checkpoint header".into()))?;
    let config = ModelConfig::parse_canonical(text)?;
    if metadata.get("config_hash").is_some_and(|h| h != &config.hash()) {
        return Err(Error::WeightLoadFailure("config hash does not match stored config".into()).into());
    }
    Ok(Checkpoint { config, weights, metadata })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path).at(path)?)
}

/// Pretrained backbone weights: `explicit` if given, else the cached file
/// under `$DAMAGE_LAB_CACHE`.
pub fn resolve_pretrained(explicit: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    match std::env::var_os(CACHE_ENV) {
        Some(dir) => Ok(PathBuf::from(dir).join(PRETRAINED_FILE)),
        None => {
            Err(Error::WeightLoadFailure(format!("resnet18_pretrained needs --weights or {CACHE_ENV}/{PRETRAINED_FILE}")).into())
        }
    }
}

pub fn load_pretrained(path: &Path) -> Result<WeightSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::WeightLoadFailure(format!("{}: {e}", path.display())))?;
    Ok(decode_weights(&bytes)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use damage_core::{InputModality, LossKind};

    fn config(loss: LossKind) -> ModelConfig {
        ModelConfig::new(InputModality::PrePost, loss, BackboneKind::TinyResnet, 32)
    }

    #[test]
    fn round_trip_preserves_parameters() {
        let mut model = build_model(&config(LossKind::CrossEntropy), None, 5).unwrap();
        let bytes = encode_checkpoint(&mut model, &[("seed", "5".into())]).unwrap();
        assert_eq!(bytes, encode_checkpoint(&mut model, &[("seed", "5".into())]).unwrap());
        let ck = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ck.metadata["seed"], "5");
        let mut back = ck.into_model(None).unwrap();
        assert_eq!(back.parameter_digest(), model.parameter_digest());
    }

    #[test]
    fn mismatched_config_refused() {
        let mut model = build_model(&config(LossKind::CrossEntropy), None, 0).unwrap();
        let ck = decode_checkpoint(&encode_checkpoint(&mut model, &[]).unwrap()).unwrap();
        let err = ck.into_model(Some(&config(LossKind::OrdinalCrossEntropy))).unwrap_err();
        assert_eq!(err.name(), "ConfigMismatch");
    }

    #[test]
    fn garbage_is_a_load_failure() {
        assert_eq!(decode_checkpoint(b"not a checkpoint").unwrap_err().name(), "WeightLoadFailure");
    }

    #[test]
    fn pretrained_stem_is_adapted() {
        // a 3-channel "pretrained" set loads into a 6-channel model
        let cfg3 = ModelConfig::new(InputModality::PostOnly, LossKind::CrossEntropy, BackboneKind::Resnet18Pretrained, 32);
        let mut donor = Model::random(&cfg3, 1).unwrap();
        let mut ws = donor.export_weights();
        ws.tensors.retain(|k, _| !k.starts_with("fc."));
        let bytes = encode_weights(&ws, &BTreeMap::new()).unwrap();
        let (back, _) = decode_weights(&bytes).unwrap();
        let cfg6 = ModelConfig { modality: InputModality::PrePost, ..cfg3 };
        let mut m = build_model(&cfg6, Some(&back), 0).unwrap();
        let w = m.export_weights();
        let (shape, data) = w.get("conv1.weight").unwrap();
        assert_eq!(shape[1], 6);
        let (_, orig) = ws.get("conv1.weight").unwrap();
        assert_eq!(data[0], orig[0] / 2.0);
    }
}
