//! Seeded mini-batch training, evaluation and the modality × loss grid.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::class::DamageClass;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::model::{build_model, encode_input, BackboneKind, EncodedInput, InputModality, Model, ModelConfig, WeightSet};
use crate::optim::Adam;
use crate::preprocess::{BuildingRecord, SplitManifest};

/// Records encoded per forward pass during evaluation.
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self { learning_rate: 0.001, batch_size: 32, epochs: 100, seed: 0 }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParams(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidParams("batch size and epochs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn canonical(&self) -> String {
        format!(
            "optimizer=adam;beta1=0.9;beta2=0.999;eps=1e-8;learning_rate={:?};batch_size={};epochs={};seed={}",
            self.learning_rate, self.batch_size, self.epochs, self.seed
        )
    }
}

/// Hash identifying a (model config, hyperparameters) pair.
pub fn run_hash(config: &ModelConfig, hp: &HyperParams) -> String {
    let mut h = Sha256::new();
    h.update(config.canonical().as_bytes());
    h.update(b"\n");
    h.update(hp.canonical().as_bytes());
    hex::encode(h.finalize())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

/// Confusion counts, `[truth][prediction]`.
pub type Confusion = [[u64; 4]; 4];

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: Confusion,
}

impl Evaluation {
    fn from_pairs(pairs: impl Iterator<Item = (DamageClass, DamageClass)>) -> Result<Self> {
        let mut confusion = [[0u64; 4]; 4];
        let mut total = 0u64;
        let mut correct = 0u64;
        for (truth, pred) in pairs {
            confusion[truth.index()][pred.index()] += 1;
            total += 1;
            correct += (truth == pred) as u64;
        }
        if total == 0 {
            return Err(Error::EmptyEvalSet);
        }
        Ok(Self { accuracy: correct as f64 / total as f64, confusion })
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRunReport {
    pub config: ModelConfig,
    pub hyper_params: HyperParams,
    pub per_epoch: Vec<EpochStats>,
    pub best_val_accuracy: f64,
    /// 1-based epoch that produced the best validation accuracy.
    pub best_epoch: usize,
    pub final_val_accuracy: f64,
    /// Validation confusion of the best checkpoint.
    pub confusion: Confusion,
    pub config_hash: String,
    pub seed: u64,
    pub split_checksum: String,
    /// Parameter digest of the best checkpoint.
    pub checkpoint_digest: String,
    pub train_size: usize,
    pub val_size: usize,
}

pub struct TrainOutcome {
    pub report: TrainRunReport,
    /// Parameters from the best validation epoch.
    pub best_model: Model,
}

/// Anything that assigns damage classes to building records.
pub trait Classifier {
    fn classify(&mut self, records: &[&BuildingRecord]) -> Result<Vec<DamageClass>>;
}

impl Classifier for Model {
    fn classify(&mut self, records: &[&BuildingRecord]) -> Result<Vec<DamageClass>> {
        let modality = self.config().modality;
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(EVAL_CHUNK) {
            let enc = chunk.iter().map(|r| encode_input(r, modality)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&EncodedInput> = enc.iter().collect();
            out.extend(self.predict(&refs)?);
        }
        Ok(out)
    }
}

/// Accuracy and confusion of `model` on `records`.
pub fn evaluate<C: Classifier + ?Sized>(model: &mut C, records: &[&BuildingRecord]) -> Result<Evaluation> {
    if records.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let preds = model.classify(records)?;
    if preds.len() != records.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} records", preds.len(), records.len())));
    }
    Evaluation::from_pairs(records.iter().map(|r| r.label).zip(preds))
}

fn evaluate_encoded(model: &mut Model, inputs: &[EncodedInput], labels: &[DamageClass]) -> Result<Evaluation> {
    let mut preds = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(EVAL_CHUNK) {
        let refs: Vec<&EncodedInput> = chunk.iter().collect();
        preds.extend(model.predict(&refs)?);
    }
    Evaluation::from_pairs(labels.iter().copied().zip(preds))
}

/// Builds a model for `config` (seeded by `hp.seed`) and trains it.
pub fn train(
    config: &ModelConfig,
    hp: &HyperParams,
    records: &[BuildingRecord],
    split: &SplitManifest,
    weights: Option<&WeightSet>,
) -> Result<TrainOutcome> {
    let model = build_model(config, weights, hp.seed)?;
    train_model(model, hp, records, split, &mut |_| {})
}

/// Trains `model` for `hp.epochs` epochs of shuffled mini-batch Adam,
/// validating after every epoch and keeping the best-validation parameters.
/// The final partial batch of each epoch is kept.
pub fn train_model(
    mut model: Model,
    hp: &HyperParams,
    records: &[BuildingRecord],
    split: &SplitManifest,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    hp.validate()?;
    let config = model.config().clone();
    if split.train.is_empty() {
        return Err(Error::InvalidParams("training split is empty".into()));
    }
    if split.val.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let encode = |idx: &[usize]| -> Result<(Vec<EncodedInput>, Vec<DamageClass>)> {
        let mut x = Vec::with_capacity(idx.len());
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            let r = records.get(i).ok_or_else(|| Error::InvalidParams(format!("split index {i} out of range")))?;
            x.push(encode_input(r, config.modality)?);
            y.push(r.label);
        }
        Ok((x, y))
    };
    let (train_x, train_y) = encode(&split.train)?;
    let (val_x, val_y) = encode(&split.val)?;

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(hp.learning_rate as f32);
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut per_epoch = Vec::with_capacity(hp.epochs);
    let mut best: Option<(f64, usize, Evaluation, Model)> = None;

    for epoch in 1..=hp.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(hp.batch_size) {
            let inputs: Vec<&EncodedInput> = batch.iter().map(|&i| &train_x[i]).collect();
            let targets: Vec<DamageClass> = batch.iter().map(|&i| train_y[i]).collect();
            model.zero_grad();
            let out = model.forward(&inputs, true, true, false)?;
            let out64: Vec<f64> = out.iter().map(|&v| v as f64).collect();
            let (loss, grad) = config.loss.batch_loss(&out64, &targets)?;
            if !loss.is_finite() {
                return Err(Error::DivergenceDetected { epoch });
            }
            let grad32: Vec<f32> = grad.iter().map(|&g| g as f32).collect();
            model.backward(&grad32, false, None);
            adam.step(&mut model);
            loss_sum += loss * batch.len() as f64;
        }
        let eval = evaluate_encoded(&mut model, &val_x, &val_y)?;
        let stats = EpochStats { epoch, train_loss: loss_sum / train_x.len() as f64, val_accuracy: eval.accuracy };
        on_epoch(&stats);
        per_epoch.push(stats);
        if best.as_ref().is_none_or(|b| eval.accuracy > b.0) {
            best = Some((eval.accuracy, epoch, eval, model.clone()));
        }
    }

    let (best_val_accuracy, best_epoch, best_eval, mut best_model) = best.expect("at least one epoch");
    let report = TrainRunReport {
        config_hash: run_hash(&config, hp),
        config,
        hyper_params: hp.clone(),
        final_val_accuracy: per_epoch.last().map_or(0.0, |s| s.val_accuracy),
        per_epoch,
        best_val_accuracy,
        best_epoch,
        confusion: best_eval.confusion,
        seed: hp.seed,
        split_checksum: split.checksum(records),
        checkpoint_digest: best_model.parameter_digest(),
        train_size: train_x.len(),
        val_size: val_x.len(),
    };
    Ok(TrainOutcome { report, best_model })
}

/// Full-scale accuracies (percent) published for the nine combinations,
/// shown next to desk-scale results for orientation only.
pub const REFERENCE_ACCURACY: [(InputModality, LossKind, f64); 9] = [
    (InputModality::PostOnly, LossKind::Mse, 45.3),
    (InputModality::PostOnly, LossKind::CrossEntropy, 59.5),
    (InputModality::PostOnly, LossKind::OrdinalCrossEntropy, 64.2),
    (InputModality::PrePost, LossKind::Mse, 50.2),
    (InputModality::PrePost, LossKind::CrossEntropy, 68.3),
    (InputModality::PrePost, LossKind::OrdinalCrossEntropy, 71.2),
    (InputModality::PrePostType, LossKind::Mse, 49.7),
    (InputModality::PrePostType, LossKind::CrossEntropy, 72.7),
    (InputModality::PrePostType, LossKind::OrdinalCrossEntropy, 74.6),
];

pub fn reference_accuracy(modality: InputModality, loss: LossKind) -> f64 {
    REFERENCE_ACCURACY.iter().find(|(m, l, _)| *m == modality && *l == loss).map(|c| c.2).unwrap_or(f64::NAN)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub modality: InputModality,
    pub loss: LossKind,
    pub report: TrainRunReport,
}

/// One trained model per (input modality, loss) pair, rows in modality
/// order and columns in loss order.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonGrid {
    pub cells: Vec<GridCell>,
    pub hyper_params: HyperParams,
}

impl ComparisonGrid {
    pub fn cell(&self, modality: InputModality, loss: LossKind) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.modality == modality && c.loss == loss)
    }

    pub fn is_complete(&self) -> bool {
        self.cells.len() == 9 && InputModality::ALL.iter().all(|&m| LossKind::ALL.iter().all(|&l| self.cell(m, l).is_some()))
    }

    /// Markdown table of best validation accuracy, rows = inputs, columns =
    /// losses. With `show_reference`, each loss column is followed by the
    /// published full-scale figure.
    pub fn render_markdown(&self, show_reference: bool) -> String {
        let mut s = String::new();
        let hp = &self.hyper_params;
        let _ = writeln!(s, "# Validation accuracy by model input and loss ({} epochs)\n", hp.epochs);
        let mut header = String::from("| Model Input |");
        let mut rule = String::from("|---|");
        for l in LossKind::ALL {
            let _ = write!(header, " {} |", l.title());
            rule.push_str("---:|");
            if show_reference {
                let _ = write!(header, " {} (reference) |", l.title());
                rule.push_str("---:|");
            }
        }
        let _ = writeln!(s, "{header}\n{rule}");
        for m in InputModality::ALL {
            let _ = write!(s, "| {} |", m.title());
            for l in LossKind::ALL {
                match self.cell(m, l) {
                    Some(c) => {
                        let _ = write!(s, " {:.1}% |", c.report.best_val_accuracy * 100.0);
                    }
                    None => s.push_str(" – |"),
                }
                if show_reference {
                    let _ = write!(s, " {:.1}% |", reference_accuracy(m, l));
                }
            }
            s.push('\n');
        }
        let _ = writeln!(s, "\nFinal-epoch validation accuracy:\n");
        let _ = writeln!(s, "| Model Input | {} |", LossKind::ALL.map(|l| l.title()).join(" | "));
        let _ = writeln!(s, "|---|---:|---:|---:|");
        for m in InputModality::ALL {
            let _ = write!(s, "| {} |", m.title());
            for l in LossKind::ALL {
                match self.cell(m, l) {
                    Some(c) => {
                        let _ = write!(s, " {:.1}% |", c.report.final_val_accuracy * 100.0);
                    }
                    None => s.push_str(" – |"),
                }
            }
            s.push('\n');
        }
        let checksum = self.cells.first().map_or("", |c| c.report.split_checksum.as_str());
        let (n_train, n_val) = self.cells.first().map_or((0, 0), |c| (c.report.train_size, c.report.val_size));
        let _ = writeln!(
            s,
            "\nBlind-guess baseline on a balanced validation set: 25.0%.\n\n\
             - train / validation records: {n_train} / {n_val}\n\
             - split checksum: `{checksum}`\n\
             - seed: {}, batch size: {}, learning rate: {}",
            hp.seed, hp.batch_size, hp.learning_rate
        );
        if show_reference {
            let _ = writeln!(s, "\nReference columns are full-scale published figures, not comparable with desk-scale runs.");
        }
        s
    }
}

/// Trains all nine (modality, loss) combinations on one split with one set
/// of hyperparameters.
#[allow(clippy::too_many_arguments)]
pub fn compare_grid(
    hp: &HyperParams,
    records: &[BuildingRecord],
    split: &SplitManifest,
    backbone: BackboneKind,
    crop_side: usize,
    weights: Option<&WeightSet>,
    on_cell: &mut dyn FnMut(&GridCell),
) -> Result<ComparisonGrid> {
    let mut cells = Vec::with_capacity(9);
    for modality in InputModality::ALL {
        for loss in LossKind::ALL {
            let config = ModelConfig::new(modality, loss, backbone, crop_side);
            let outcome = train(&config, hp, records, split, weights)?;
            let cell = GridCell { modality, loss, report: outcome.report };
            on_cell(&cell);
            cells.push(cell);
        }
    }
    Ok(ComparisonGrid { cells, hyper_params: hp.clone() })
}
