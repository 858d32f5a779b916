//! The three training criteria (softmax cross-entropy, squared error on the
//! class index, cumulative-threshold ordinal cross-entropy), their gradients
//! with respect to raw head outputs, and the matching decode rules.
//!
//! Every loss has a probability-space form, which mirrors the textbook
//! definition, and a logit-space form used for training, which is computed
//! with log-sum-exp / softplus so it never takes the log of zero.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::class::DamageClass;
use crate::error::{Error, Result};

/// Probability floor applied where probabilities are consumed directly.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossKind {
    Mse,
    CrossEntropy,
    OrdinalCrossEntropy,
}

impl LossKind {
    /// Column order of the comparison grid.
    pub const ALL: [Self; 3] = [Self::Mse, Self::CrossEntropy, Self::OrdinalCrossEntropy];

    pub fn tag(self) -> &'static str {
        match self {
            Self::Mse => "mse",
            Self::CrossEntropy => "ce",
            Self::OrdinalCrossEntropy => "ordinal",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Self::Mse => "Mean Squared Error",
            Self::CrossEntropy => "Cross-Entropy Loss",
            Self::OrdinalCrossEntropy => "Ordinal Cross-Entropy Loss",
        }
    }

    /// Number of raw outputs the model head must produce.
    pub fn head_width(self) -> usize {
        match self {
            Self::Mse => 1,
            Self::CrossEntropy => 4,
            Self::OrdinalCrossEntropy => 3,
        }
    }

    /// Mean loss over a batch of raw head outputs (row-major, `head_width`
    /// per row) and its gradient with respect to those outputs.
    pub fn batch_loss(self, outputs: &[f64], targets: &[DamageClass]) -> Result<(f64, Vec<f64>)> {
        let w = self.head_width();
        let b = targets.len();
        if b == 0 {
            return Err(Error::EmptyBatch);
        }
        if outputs.len() != b * w {
            return Err(Error::ShapeMismatch(alloc::format!("{} outputs for {} targets of width {}", outputs.len(), b, w)));
        }
        let scale = 1.0 / b as f64;
        let mut total = 0.0;
        let mut grad = vec![0.0; outputs.len()];
        for (i, &t) in targets.iter().enumerate() {
            let row = &outputs[i * w..(i + 1) * w];
            let g = &mut grad[i * w..(i + 1) * w];
            let l = match self {
                Self::Mse => {
                    let d = row[0] - t.ordinal() as f64;
                    g[0] = 2.0 * d;
                    d * d
                }
                Self::CrossEntropy => {
                    let (l, dz) = cross_entropy_with_logits(row.try_into().unwrap(), t);
                    g.copy_from_slice(&dz);
                    l
                }
                Self::OrdinalCrossEntropy => {
                    let (l, dz) = ordinal_ce_with_logits(row.try_into().unwrap(), t);
                    g.copy_from_slice(&dz);
                    l
                }
            };
            total += l;
        }
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok((total * scale, grad))
    }

    /// Hard class prediction from one row of raw head outputs.
    pub fn decode(self, row: &[f64], rule: OrdinalDecode) -> Result<DamageClass> {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        match self {
            Self::Mse => mse_decode(row[0]),
            Self::CrossEntropy => {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                DamageClass::new(best as u8)
            }
            Self::OrdinalCrossEntropy => {
                let z: [f64; 3] = row.try_into().map_err(|_| Error::ShapeMismatch("ordinal row".into()))?;
                Ok(ordinal_decode(&Sigmoid3::from_logits(&z), rule))
            }
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(Self::CrossEntropy),
            "mse" => Ok(Self::Mse),
            "ordinal" => Ok(Self::OrdinalCrossEntropy),
            other => Err(Error::InvalidParams(alloc::format!("unknown loss `{other}`"))),
        }
    }
}

/// Softmax output over the four damage classes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probs4([f64; 4]);

impl Probs4 {
    pub fn new(p: [f64; 4]) -> Result<Self> {
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidParams(alloc::format!("not a distribution: {p:?}")));
        }
        Ok(Self(p))
    }

    pub fn from_logits(z: &[f64; 4]) -> Self {
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e = z.map(|v| libm::exp(v - m));
        let s: f64 = e.iter().sum();
        Self(e.map(|v| v / s))
    }

    pub fn get(&self) -> [f64; 4] {
        self.0
    }
}

/// Per-threshold sigmoid outputs of the ordinal head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sigmoid3([f64; 3]);

impl Sigmoid3 {
    pub fn new(s: [f64; 3]) -> Result<Self> {
        if s.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::InvalidParams(alloc::format!("sigmoid outputs outside (0,1): {s:?}")));
        }
        Ok(Self(s))
    }

    pub fn from_logits(z: &[f64; 3]) -> Self {
        Self(z.map(sigmoid))
    }

    pub fn get(&self) -> [f64; 3] {
        self.0
    }
}

/// Cumulative threshold code: class k is k ones followed by zeros.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OrdinalCode(pub [u8; 3]);

impl OrdinalCode {
    pub fn is_cumulative(&self) -> bool {
        self.0.windows(2).all(|w| w[0] >= w[1]) && self.0.iter().all(|&b| b <= 1)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum OrdinalDecode {
    /// Largest k whose first k thresholds all exceed 0.5.
    #[default]
    Scan,
    /// Number of thresholds exceeding 0.5.
    Count,
}

impl OrdinalDecode {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Scan => "scan",
            Self::Count => "count",
        }
    }
}

impl FromStr for OrdinalDecode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scan" => Ok(Self::Scan),
            "count" => Ok(Self::Count),
            other => Err(Error::InvalidParams(alloc::format!("unknown ordinal decode `{other}`"))),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + libm::log1p(libm::exp(-z.abs()))
}

/// −Σ_c y_c ln p_c for a one-hot target, i.e. −ln p_target.
pub fn cross_entropy(probs: &Probs4, target: DamageClass) -> f64 {
    -libm::log(probs.0[target.index()].max(PROB_EPS))
}

/// Cross-entropy of softmax(z) and its gradient softmax(z) − onehot.
pub fn cross_entropy_with_logits(z: &[f64; 4], target: DamageClass) -> (f64, [f64; 4]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + libm::log(z.iter().map(|v| libm::exp(v - m)).sum::<f64>());
    let loss = lse - z[target.index()];
    let mut g = z.map(|v| libm::exp(v - lse));
    g[target.index()] -= 1.0;
    (loss, g)
}

/// (1/b) Σ (y − ŷ)² against the class index.
pub fn mse_loss(preds: &[f64], targets: &[DamageClass]) -> Result<f64> {
    if preds.is_empty() || targets.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if preds.len() != targets.len() {
        return Err(Error::ShapeMismatch(alloc::format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    let sum: f64 = preds
        .iter()
        .zip(targets)
        .map(|(&p, t)| {
            let d = t.ordinal() as f64 - p;
            d * d
        })
        .sum();
    Ok(sum / preds.len() as f64)
}

pub fn ordinal_encode(target: DamageClass) -> OrdinalCode {
    let k = target.index();
    let mut bits = [0u8; 3];
    bits[..k].iter_mut().for_each(|b| *b = 1);
    OrdinalCode(bits)
}

/// Summed per-threshold binary cross-entropy against the cumulative code.
pub fn ordinal_ce(s: &Sigmoid3, target: DamageClass) -> f64 {
    let code = ordinal_encode(target);
    s.0.iter()
        .zip(code.0)
        .map(|(&p, bit)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if bit == 1 {
                -libm::log(p)
            } else {
                -libm::log1p(-p)
            }
        })
        .sum()
}

/// Ordinal cross-entropy from threshold logits; gradient is σ(z) − bit.
pub fn ordinal_ce_with_logits(z: &[f64; 3], target: DamageClass) -> (f64, [f64; 3]) {
    let code = ordinal_encode(target);
    let mut loss = 0.0;
    let mut g = [0.0; 3];
    for k in 0..3 {
        let b = code.0[k] as f64;
        loss += softplus(z[k]) - b * z[k];
        g[k] = sigmoid(z[k]) - b;
    }
    (loss, g)
}

pub fn ordinal_decode(s: &Sigmoid3, rule: OrdinalDecode) -> DamageClass {
    let k = match rule {
        OrdinalDecode::Scan => s.0.iter().take_while(|&&p| p > 0.5).count(),
        OrdinalDecode::Count => s.0.iter().filter(|&&p| p > 0.5).count(),
    };
    DamageClass::new(k as u8).unwrap()
}

/// Nearest class index (ties away from zero), clamped to 0..=3.
pub fn mse_decode(x: f64) -> Result<DamageClass> {
    if !x.is_finite() {
        return Err(Error::NonFinite);
    }
    let k = libm::round(x).clamp(0.0, 3.0) as u8;
    DamageClass::new(k)
}
