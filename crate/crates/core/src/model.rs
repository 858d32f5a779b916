//! Damage classifiers over a residual backbone for the three input
//! modalities, and the tensor encoding of building records.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use sha2::{Digest, Sha256};

use crate::class::{DamageClass, DisasterType};
use crate::error::{Error, Result};
use crate::losses::{LossKind, OrdinalDecode};
use crate::nn::{global_avg_pool, global_avg_pool_backward, Act, Backbone, BackboneSpec, Captured, Linear, Param, Parameters};
use crate::preprocess::BuildingRecord;
use crate::raster::RgbImage;

/// Per-channel RGB statistics of the corpus the reference backbone weights
/// were trained on. Applied identically to pre and post triples.
pub const CHANNEL_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const CHANNEL_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InputModality {
    PostOnly,
    PrePost,
    PrePostType,
}

impl InputModality {
    /// Row order of the comparison grid.
    pub const ALL: [Self; 3] = [Self::PostOnly, Self::PrePost, Self::PrePostType];

    pub fn tag(self) -> &'static str {
        match self {
            Self::PostOnly => "post_only",
            Self::PrePost => "pre_post",
            Self::PrePostType => "pre_post_type",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Self::PostOnly => "Post-Disaster Image Only",
            Self::PrePost => "Pre-Disaster, Post-Disaster Images",
            Self::PrePostType => "Pre-Disaster, Post-Disaster Images, Disaster Type",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Self::PostOnly => 3,
            Self::PrePost | Self::PrePostType => 6,
        }
    }

    pub fn has_aux(self) -> bool {
        self == Self::PrePostType
    }
}

impl fmt::Display for InputModality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for InputModality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == s).ok_or_else(|| Error::InvalidParams(format!("unknown modality `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BackboneKind {
    /// Randomly initialised 4-block network, no weight file needed.
    TinyResnet,
    /// 18-layer residual network initialised from a weight file.
    Resnet18Pretrained,
}

impl BackboneKind {
    pub fn tag(self) -> &'static str {
        match self {
            Self::TinyResnet => "tiny_resnet",
            Self::Resnet18Pretrained => "resnet18_pretrained",
        }
    }

    pub fn spec(self) -> BackboneSpec {
        match self {
            Self::TinyResnet => BackboneSpec::tiny(),
            Self::Resnet18Pretrained => BackboneSpec::resnet18(),
        }
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny_resnet" => Ok(Self::TinyResnet),
            "resnet18_pretrained" => Ok(Self::Resnet18Pretrained),
            other => Err(Error::InvalidParams(format!("unknown backbone `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub modality: InputModality,
    pub loss: LossKind,
    pub backbone: BackboneKind,
    pub crop_side: usize,
    pub head_width: usize,
    pub ordinal_decode: OrdinalDecode,
}

impl ModelConfig {
    pub fn new(modality: InputModality, loss: LossKind, backbone: BackboneKind, crop_side: usize) -> Self {
        Self { modality, loss, backbone, crop_side, head_width: loss.head_width(), ordinal_decode: OrdinalDecode::Scan }
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_width != self.loss.head_width() {
            return Err(Error::ConfigMismatch(format!(
                "head width {} does not fit loss `{}` (needs {})",
                self.head_width,
                self.loss,
                self.loss.head_width()
            )));
        }
        if self.crop_side < 16 {
            return Err(Error::InvalidParams(format!("crop side {} below 16", self.crop_side)));
        }
        Ok(())
    }

    /// Stable one-line description used for hashing and checkpoint headers.
    pub fn canonical(&self) -> String {
        format!(
            "modality={};loss={};backbone={};crop_side={};head_width={};ordinal_decode={}",
            self.modality,
            self.loss,
            self.backbone.tag(),
            self.crop_side,
            self.head_width,
            self.ordinal_decode.tag()
        )
    }

    pub fn parse_canonical(s: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for part in s.split(';') {
            let (k, v) = part.split_once('=').ok_or_else(|| Error::InvalidParams(format!("bad config field `{part}`")))?;
            kv.insert(k, v);
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::InvalidParams(format!("missing `{k}`")));
        let num =
            |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::InvalidParams(format!("`{k}` is not an integer"))) };
        Ok(Self {
            modality: get("modality")?.parse()?,
            loss: get("loss")?.parse()?,
            backbone: get("backbone")?.parse()?,
            crop_side: num("crop_side")?,
            head_width: num("head_width")?,
            ordinal_decode: get("ordinal_decode")?.parse()?,
        })
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

/// Standardised network input for one building.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedInput {
    /// C×S×S, channel-major.
    pub tensor: Vec<f32>,
    pub channels: usize,
    pub side: usize,
    pub aux: Option<[f32; 6]>,
}

fn push_standardized(out: &mut Vec<f32>, img: &RgbImage) {
    let raw = img.as_raw();
    for c in 0..3 {
        out.extend(raw.iter().skip(c).step_by(3).map(|&v| (v as f32 / 255.0 - CHANNEL_MEAN[c]) / CHANNEL_STD[c]));
    }
}

/// Post crop only, or pre then post channels, plus the disaster one-hot for
/// the type-aware modality.
pub fn encode_input(record: &BuildingRecord, modality: InputModality) -> Result<EncodedInput> {
    let (pre, post) = (&record.crop_pre, &record.crop_post);
    let side = post.width();
    if post.height() != side || pre.width() != side || pre.height() != side {
        return Err(Error::ShapeMismatch(format!(
            "crops must be equal squares, got pre {}x{} and post {}x{}",
            pre.width(),
            pre.height(),
            post.width(),
            post.height()
        )));
    }
    let mut tensor = Vec::with_capacity(modality.channels() * side * side);
    if modality != InputModality::PostOnly {
        push_standardized(&mut tensor, pre);
    }
    push_standardized(&mut tensor, post);
    Ok(EncodedInput {
        tensor,
        channels: modality.channels(),
        side,
        aux: modality.has_aux().then(|| record.disaster_type.one_hot()),
    })
}

/// Widens K×3×k×k stem kernels to K×6×k×k by repeating them at half scale,
/// so an input whose two triples are equal reproduces the original response.
pub fn adapt_first_layer(weights3: &[f32], shape: [usize; 4]) -> Result<(Vec<f32>, [usize; 4])> {
    let [k_out, c_in, kh, kw] = shape;
    if c_in != 3 || weights3.len() != k_out * 3 * kh * kw {
        return Err(Error::ShapeMismatch(format!(
            "expected K x 3 x k x k stem kernels, got {shape:?} with {} values",
            weights3.len()
        )));
    }
    let block = 3 * kh * kw;
    let mut out = Vec::with_capacity(weights3.len() * 2);
    for o in 0..k_out {
        let src = &weights3[o * block..(o + 1) * block];
        for _ in 0..2 {
            out.extend(src.iter().map(|w| w * 0.5));
        }
    }
    Ok((out, [k_out, 6, kh, kw]))
}

/// Appends the disaster one-hot to a pooled feature vector.
pub fn fuse_disaster_type(pooled: &[f32], one_hot: &[f32; 6]) -> Vec<f32> {
    let mut v = Vec::with_capacity(pooled.len() + 6);
    v.extend_from_slice(pooled);
    v.extend_from_slice(one_hot);
    v
}

/// Named tensors, e.g. the contents of a weight file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightSet {
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl WeightSet {
    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        self.tensors.insert(name.into(), (shape, data));
    }

    pub fn get(&self, name: &str) -> Option<&(Vec<usize>, Vec<f32>)> {
        self.tensors.get(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}

/// Everything one backward pass can report besides parameter gradients.
#[derive(Clone, Debug, Default)]
pub struct BackwardOutput {
    pub input_grad: Option<Act>,
    pub aux_grad: Option<Vec<f32>>,
    pub captured: Option<Captured>,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    pub backbone: Backbone,
    pub fc: Linear,
    last: Option<(usize, usize, usize)>,
}

/// Builds a classifier for `config`, initialised from `seed`. The
/// pretrained backbone requires `weights`; the tiny one takes none.
pub fn build_model(config: &ModelConfig, weights: Option<&WeightSet>, seed: u64) -> Result<Model> {
    config.validate()?;
    match (config.backbone, weights) {
        (BackboneKind::Resnet18Pretrained, None) => {
            return Err(Error::WeightLoadFailure("resnet18_pretrained needs a weight file".into()))
        }
        (BackboneKind::TinyResnet, Some(_)) => {
            return Err(Error::ConfigMismatch("tiny_resnet takes no pretrained weights".into()))
        }
        _ => {}
    }
    let mut model = Model::init(config.clone(), seed);
    if let Some(w) = weights {
        model.load_weights(w, false)?;
    }
    Ok(model)
}

impl Model {
    /// Randomly initialised model for any backbone, without the weight-file
    /// requirement of [`build_model`]. Useful for fabricating weight files.
    pub fn random(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self::init(config.clone(), seed))
    }

    fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::new(config.backbone.spec(), config.modality.channels(), &mut rng);
        let in_f = backbone.spec.feature_width() + if config.modality.has_aux() { 6 } else { 0 };
        let mut fc = Linear::new(in_f, config.head_width);
        let bound = 1.0 / libm::sqrtf(in_f as f32);
        let u = Uniform::new_inclusive(-bound, bound).unwrap();
        fc.weight.value.iter_mut().for_each(|v| *v = u.sample(&mut rng));
        fc.bias.value.iter_mut().for_each(|v| *v = u.sample(&mut rng));
        Self { config, backbone, fc, last: None }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.backbone.spec.layer_names()
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layer_names().iter().position(|n| n == name).ok_or_else(|| Error::UnknownLayer(name.into()))
    }

    /// Feature map the backbone ends on (the usual Grad-CAM target).
    pub fn last_conv_layer(&self) -> String {
        self.layer_names().pop().unwrap_or_default()
    }

    /// Raw head outputs, N × head_width row-major. `keep` caches the state
    /// a following [`Model::backward`] needs; `features` retains every named
    /// feature map in `self.backbone.features`.
    pub fn forward(&mut self, inputs: &[&EncodedInput], train: bool, keep: bool, features: bool) -> Result<Vec<f32>> {
        let c = self.config.modality.channels();
        let s = self.config.crop_side;
        for x in inputs {
            if x.channels != c || x.side != s || x.tensor.len() != c * s * s {
                return Err(Error::ShapeMismatch(format!(
                    "model expects {c}x{s}x{s} inputs, got {}x{}x{}",
                    x.channels, x.side, x.side
                )));
            }
            if x.aux.is_some() != self.config.modality.has_aux() {
                return Err(Error::ShapeMismatch("disaster one-hot presence does not match modality".into()));
            }
        }
        if inputs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let samples: Vec<&[f32]> = inputs.iter().map(|x| x.tensor.as_slice()).collect();
        let batch = Act::from_samples(c, s, s, &samples);
        let feat = self.backbone.forward(&batch, train, keep, features);
        self.last = Some((feat.n, feat.h, feat.w));
        let pooled = global_avg_pool(&feat);
        let head_in = if self.config.modality.has_aux() {
            let f = feat.c;
            let mut v = Vec::with_capacity(inputs.len() * (f + 6));
            for (i, x) in inputs.iter().enumerate() {
                v.extend(fuse_disaster_type(&pooled[i * f..(i + 1) * f], x.aux.as_ref().unwrap()));
            }
            v
        } else {
            pooled
        };
        Ok(self.fc.forward(&head_in, keep))
    }

    /// Backpropagates `dlogits` (N × head_width), accumulating parameter
    /// gradients.
    pub fn backward(&mut self, dlogits: &[f32], need_input_grad: bool, capture: Option<usize>) -> BackwardOutput {
        let (n, h, w) = self.last.take().expect("backward without forward");
        let dhead = self.fc.backward(dlogits);
        let f = self.backbone.spec.feature_width();
        let (dpool, aux_grad) = if self.config.modality.has_aux() {
            let mut dp = Vec::with_capacity(n * f);
            let mut da = Vec::with_capacity(n * 6);
            for row in dhead.chunks(f + 6) {
                dp.extend_from_slice(&row[..f]);
                da.extend_from_slice(&row[f..]);
            }
            (dp, Some(da))
        } else {
            (dhead, None)
        };
        let dfeat = global_avg_pool_backward(&dpool, f, n, h, w);
        let (input_grad, captured) = self.backbone.backward(dfeat, need_input_grad, capture);
        BackwardOutput { input_grad, aux_grad, captured }
    }

    /// Evaluation-mode scores as f64 rows.
    pub fn scores(&mut self, inputs: &[&EncodedInput]) -> Result<Vec<f64>> {
        Ok(self.forward(inputs, false, false, false)?.into_iter().map(f64::from).collect())
    }

    pub fn predict(&mut self, inputs: &[&EncodedInput]) -> Result<Vec<DamageClass>> {
        let scores = self.scores(inputs)?;
        let w = self.config.head_width;
        scores.chunks(w).map(|row| self.config.loss.decode(row, self.config.ordinal_decode)).collect()
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(String, &mut Param)) {
        self.backbone.visit("", f);
        self.fc.visit("fc", f);
    }

    pub fn export_weights(&mut self) -> WeightSet {
        let mut ws = WeightSet::default();
        self.visit_params(&mut |name, p| ws.insert(name, p.shape.clone(), p.value.clone()));
        ws
    }

    /// Copies tensors from `ws` by name. A 3-channel stem is widened when
    /// this model takes six channels. The head is loaded only when
    /// `include_head` is set, since pretrained heads have the wrong width.
    pub fn load_weights(&mut self, ws: &WeightSet, include_head: bool) -> Result<()> {
        let mut failure = None;
        self.visit_params(&mut |name, p| {
            if failure.is_some() || (!include_head && name.starts_with("fc.")) {
                return;
            }
            let Some((shape, data)) = ws.get(&name) else {
                failure = Some(Error::WeightLoadFailure(format!("missing tensor `{name}`")));
                return;
            };
            if name == "conv1.weight" && p.shape[1] == 6 && shape.len() == 4 && shape[1] == 3 {
                match adapt_first_layer(data, [shape[0], shape[1], shape[2], shape[3]]) {
                    Ok((w6, s6)) if s6.as_slice() == p.shape.as_slice() => p.value = w6,
                    _ => failure = Some(Error::WeightLoadFailure(format!("cannot adapt stem of shape {shape:?}"))),
                }
                return;
            }
            if shape != &p.shape || data.len() != p.value.len() {
                failure =
                    Some(Error::WeightLoadFailure(format!("tensor `{name}` has shape {shape:?}, model needs {:?}", p.shape)));
                return;
            }
            p.value.copy_from_slice(data);
        });
        failure.map_or(Ok(()), Err)
    }

    /// SHA-256 over every tensor's name, shape and little-endian values.
    pub fn parameter_digest(&mut self) -> String {
        let mut h = Sha256::new();
        self.visit_params(&mut |name, p| {
            h.update(name.as_bytes());
            for d in &p.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in &p.value {
                h.update(v.to_le_bytes());
            }
        });
        hex::encode(h.finalize())
    }

    pub fn parameter_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| {
            if p.trainable {
                n += p.value.len()
            }
        });
        n
    }
}

/// Index order of [`DisasterType::one_hot`], exposed for documentation and
/// tests.
pub fn one_hot_slot(t: DisasterType) -> usize {
    t.index()
}
