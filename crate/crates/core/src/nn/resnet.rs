use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::conv::Conv2d;
use super::layers::{relu, relu_backward, MaxPool};
use super::norm::BatchNorm2d;
use super::tensor::{join, Act, Param, Parameters};

/// Shape of a residual backbone built from basic (two 3×3 conv) blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneSpec {
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_width: usize,
    pub stem_maxpool: bool,
    /// (width, blocks, first-block stride) per stage.
    pub stages: Vec<(usize, usize, usize)>,
}

impl BackboneSpec {
    /// Desk-scale network: stride-2 3×3 stem, one block per stage at widths
    /// 16/32/64/128, 16× total downsampling.
    pub fn tiny() -> Self {
        Self {
            stem_kernel: 3,
            stem_stride: 2,
            stem_width: 16,
            stem_maxpool: false,
            stages: alloc::vec![(16, 1, 1), (32, 1, 2), (64, 1, 2), (128, 1, 2)],
        }
    }

    /// The standard 18-layer residual network.
    pub fn resnet18() -> Self {
        Self {
            stem_kernel: 7,
            stem_stride: 2,
            stem_width: 64,
            stem_maxpool: true,
            stages: alloc::vec![(64, 2, 1), (128, 2, 2), (256, 2, 2), (512, 2, 2)],
        }
    }

    pub fn feature_width(&self) -> usize {
        self.stages.last().map_or(self.stem_width, |s| s.0)
    }

    /// Names of the feature maps a caller can inspect.
    pub fn layer_names(&self) -> Vec<String> {
        let mut names = alloc::vec![String::from("stem")];
        names.extend((1..=self.stages.len()).map(|i| format!("layer{i}")));
        names
    }
}

fn kaiming_fill<R: Rng>(p: &mut Param, rng: &mut R) {
    // fan-out mode, as for convolutions followed by rectifiers
    let fan_out = p.shape[0] * p.shape[2] * p.shape[3];
    let std = libm::sqrtf(2.0 / fan_out as f32);
    let normal = Normal::new(0.0f32, std).unwrap();
    p.value.iter_mut().for_each(|v| *v = normal.sample(rng));
}

#[derive(Clone, Debug)]
pub struct BasicBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub downsample: Option<(Conv2d, BatchNorm2d)>,
    masks: (Vec<bool>, Vec<bool>),
}

impl BasicBlock {
    pub fn new<R: Rng>(in_c: usize, out_c: usize, stride: usize, rng: &mut R) -> Self {
        let mut conv1 = Conv2d::new(in_c, out_c, 3, stride, 1);
        let mut conv2 = Conv2d::new(out_c, out_c, 3, 1, 1);
        kaiming_fill(&mut conv1.weight, rng);
        kaiming_fill(&mut conv2.weight, rng);
        let downsample = (stride != 1 || in_c != out_c).then(|| {
            let mut c = Conv2d::new(in_c, out_c, 1, stride, 0);
            kaiming_fill(&mut c.weight, rng);
            (c, BatchNorm2d::new(out_c))
        });
        Self { conv1, bn1: BatchNorm2d::new(out_c), conv2, bn2: BatchNorm2d::new(out_c), downsample, masks: Default::default() }
    }

    pub fn forward(&mut self, x: &Act, train: bool, keep: bool) -> Act {
        let mut h = self.conv1.forward(x, keep);
        self.bn1.forward(&mut h, train);
        let m1 = relu(&mut h);
        let mut out = self.conv2.forward(&h, keep);
        self.bn2.forward(&mut out, train);
        match self.downsample.as_mut() {
            Some((conv, bn)) => {
                let mut s = conv.forward(x, keep);
                bn.forward(&mut s, train);
                out.data.iter_mut().zip(&s.data).for_each(|(o, v)| *o += v);
            }
            None => out.data.iter_mut().zip(&x.data).for_each(|(o, v)| *o += v),
        }
        let m2 = relu(&mut out);
        if keep {
            self.masks = (m1, m2);
        }
        out
    }

    pub fn backward(&mut self, mut dy: Act) -> Act {
        let (m1, m2) = core::mem::take(&mut self.masks);
        relu_backward(&mut dy, &m2);
        let mut dshort = dy.clone();
        self.bn2.backward(&mut dy);
        let mut dh = self.conv2.backward(&dy, true).unwrap();
        relu_backward(&mut dh, &m1);
        self.bn1.backward(&mut dh);
        let mut dx = self.conv1.backward(&dh, true).unwrap();
        match self.downsample.as_mut() {
            Some((conv, bn)) => {
                bn.backward(&mut dshort);
                let ds = conv.backward(&dshort, true).unwrap();
                dx.data.iter_mut().zip(&ds.data).for_each(|(d, v)| *d += v);
            }
            None => dx.data.iter_mut().zip(&dshort.data).for_each(|(d, v)| *d += v),
        }
        dx
    }
}

impl Parameters for BasicBlock {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        if let Some((c, b)) = self.downsample.as_mut() {
            c.visit(&join(prefix, "downsample.0"), f);
            b.visit(&join(prefix, "downsample.1"), f);
        }
    }
}

/// Convolutional feature extractor. Parameter names follow the common
/// `conv1` / `bn1` / `layerN.M.*` convention so published weights load
/// without renaming.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub spec: BackboneSpec,
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub stages: Vec<Vec<BasicBlock>>,
    maxpool: MaxPool,
    stem_mask: Vec<bool>,
    /// Stage outputs from the last forward (stem first), kept on request.
    pub features: Vec<Act>,
}

/// Gradient captured at a named feature map during a backward pass.
#[derive(Clone, Debug)]
pub struct Captured {
    pub layer: usize,
    pub grad: Act,
}

impl Backbone {
    pub fn new<R: Rng>(spec: BackboneSpec, in_c: usize, rng: &mut R) -> Self {
        let k = spec.stem_kernel;
        let mut conv1 = Conv2d::new(in_c, spec.stem_width, k, spec.stem_stride, k / 2).with_input_groups(3.min(in_c));
        kaiming_fill(&mut conv1.weight, rng);
        let mut in_w = spec.stem_width;
        let mut stages = Vec::new();
        for &(width, blocks, stride) in &spec.stages {
            let mut stage = Vec::new();
            for b in 0..blocks {
                stage.push(BasicBlock::new(in_w, width, if b == 0 { stride } else { 1 }, rng));
                in_w = width;
            }
            stages.push(stage);
        }
        Self {
            bn1: BatchNorm2d::new(spec.stem_width),
            spec,
            conv1,
            stages,
            maxpool: MaxPool::default(),
            stem_mask: Vec::new(),
            features: Vec::new(),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.in_c
    }

    /// Runs the extractor. `keep` caches what backward needs; `features`
    /// additionally retains each named feature map.
    pub fn forward(&mut self, x: &Act, train: bool, keep: bool, features: bool) -> Act {
        self.features.clear();
        let mut h = self.conv1.forward(x, keep);
        self.bn1.forward(&mut h, train);
        self.stem_mask = relu(&mut h);
        if self.spec.stem_maxpool {
            h = self.maxpool.forward(&h);
        }
        if features {
            self.features.push(h.clone());
        }
        for stage in self.stages.iter_mut() {
            for block in stage.iter_mut() {
                h = block.forward(&h, train, keep);
            }
            if features {
                self.features.push(h.clone());
            }
        }
        h
    }

    /// Backpropagates from the final feature map. Returns the input gradient
    /// (if requested) and the gradient at feature map `capture`.
    pub fn backward(&mut self, mut dy: Act, need_dx: bool, capture: Option<usize>) -> (Option<Act>, Option<Captured>) {
        let mut captured = None;
        let n_stages = self.stages.len();
        for (si, stage) in self.stages.iter_mut().enumerate().rev() {
            if capture == Some(si + 1) {
                captured = Some(Captured { layer: si + 1, grad: dy.clone() });
            }
            for block in stage.iter_mut().rev() {
                dy = block.backward(dy);
            }
        }
        if capture == Some(0) {
            captured = Some(Captured { layer: 0, grad: dy.clone() });
        }
        debug_assert!(capture.is_none_or(|c| c <= n_stages));
        if self.spec.stem_maxpool {
            dy = self.maxpool.backward(&dy);
        }
        relu_backward(&mut dy, &self.stem_mask);
        self.bn1.backward(&mut dy);
        (self.conv1.backward(&dy, need_dx), captured)
    }
}

impl Parameters for Backbone {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        for (si, stage) in self.stages.iter_mut().enumerate() {
            for (bi, block) in stage.iter_mut().enumerate() {
                block.visit(&join(prefix, &format!("layer{}.{}", si + 1, bi)), f);
            }
        }
    }
}
