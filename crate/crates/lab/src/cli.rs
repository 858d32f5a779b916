//! `damage-lab` command line.
//!
//! Exit status: 0 on success, 1 on a domain error (printed with its
//! taxonomy name), 2 on a usage error.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use damage_core::synth::SynthParams;
use damage_core::train::{evaluate, train_model, ComparisonGrid, GridCell};
use damage_core::{
    build_model, BackboneKind, BuildingRecord, CropOptions, HyperParams, InputModality, LossKind, ModelConfig, SplitManifest,
    WeightSet,
};
use serde::Serialize;

use crate::cam::{cam_batch, CamOptions, ClassFrom};
use crate::checkpoint::{load_checkpoint, load_pretrained, resolve_pretrained, save_checkpoint};
use crate::config::RunFile;
use crate::error::{LabError, Result};
use crate::manifest::{area_histogram, preprocess_root, read_manifest, write_json, write_manifest, PreprocessOptions};
use crate::report::{grid_json, write_report, EvaluationJson, RunMeta};
use crate::synthio::{separability_report, write_synth_root};

pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const REPORT_FILE: &str = "report.json";
pub const GRID_FILE: &str = "grid.md";

#[derive(Debug, Parser)]
#[command(name = "damage-lab", version, about = "Building-damage classification experiments")]
struct Cli {
    /// Seed for generation, splitting and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset root.
    Synth(SynthArgs),
    /// Filter, crop and split a dataset root into a manifest.
    Preprocess(PreprocessArgs),
    /// Train one model on a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Train all nine input/loss combinations and render the grid.
    Compare(CompareArgs),
    /// Render class activation maps for validation records.
    Gradcam(GradcamArgs),
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    scenes: usize,
    #[arg(long, default_value_t = 20)]
    buildings_per_scene: usize,
    /// Four comma-separated class fractions summing to 1.
    #[arg(long, default_value = "0.25,0.25,0.25,0.25")]
    class_mix: String,
    #[arg(long, default_value_t = 1024)]
    image_side: usize,
    #[arg(long, default_value_t = 30)]
    min_box: usize,
    #[arg(long, default_value_t = 90)]
    max_box: usize,
    #[arg(long, default_value_t = 0.05)]
    noise_floor: f64,
    /// Tint damage by disaster type so the type carries signal.
    #[arg(long)]
    type_bias: bool,
}

#[derive(Debug, Args, Serialize)]
struct PreprocessArgs {
    #[arg(long)]
    root: PathBuf,
    #[arg(long, default_value_t = damage_core::preprocess::MIN_BBOX_AREA)]
    min_area: u64,
    #[arg(long, default_value_t = damage_core::preprocess::DEFAULT_CROP_SIDE)]
    crop_side: usize,
    #[arg(long, default_value_t = 0)]
    pad: u32,
    #[arg(long, default_value_t = damage_core::preprocess::DEFAULT_SPLIT_RATIO)]
    ratio: f64,
}

#[derive(Debug, Args, Serialize)]
struct HpOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    /// Run config file; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    /// Start from this checkpoint; its config must equal the run's.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Pretrained backbone weights for resnet18_pretrained.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[command(flatten)]
    hp: HpOverrides,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// train, val or all.
    #[arg(long, default_value = "val")]
    split: String,
}

#[derive(Debug, Args, Serialize)]
struct CompareArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Print the published full-scale accuracies next to each column.
    #[arg(long)]
    show_paper_ref: bool,
    /// Config file supplying hyperparameters and backbone; its modality and
    /// loss are ignored.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    backbone: Option<String>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Cells trained concurrently. Results do not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    hp: HpOverrides,
}

#[derive(Debug, Args, Serialize)]
struct GradcamArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Feature map name (stem, layer1..layer4); defaults to the last.
    #[arg(long)]
    layer: Option<String>,
    #[arg(long, default_value_t = crate::cam::DEFAULT_ALPHA)]
    alpha: f32,
    /// label or prediction.
    #[arg(long, default_value = "prediction")]
    class_from: String,
    /// Render at most this many validation records.
    #[arg(long)]
    limit: Option<usize>,
}

enum Failure {
    Usage(clap::Error),
    Domain(LabError),
}

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        Failure::Domain(e)
    }
}

impl From<damage_core::Error> for Failure {
    fn from(e: damage_core::Error) -> Self {
        Failure::Domain(e.into())
    }
}

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(Cli::command().error(ErrorKind::MissingRequiredArgument, msg))
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    let _ = env_logger::Builder::new().filter_level(cli.log_level).format_timestamp(None).try_init();
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(&cli, &argv) {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            let _ = e.print();
            2
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {}: {e}", e.name());
            1
        }
    }
}

fn dispatch(cli: &Cli, argv: &[String]) -> std::result::Result<(), Failure> {
    let out = cli.out.clone().ok_or_else(|| usage("--out <DIR> is required"))?;
    let (name, settings, seed) = match &cli.command {
        Command::Synth(a) => ("synth", to_value(a), synth(a, cli.seed.unwrap_or(0), &out)?),
        Command::Preprocess(a) => ("preprocess", to_value(a), preprocess(a, cli.seed.unwrap_or(0), &out)?),
        Command::Train(a) => ("train", to_value(a), train(a, cli.seed, &out)?),
        Command::Eval(a) => ("eval", to_value(a), eval(a, &out)?),
        Command::Compare(a) => ("compare", to_value(a), compare(a, cli.seed, &out)?),
        Command::Gradcam(a) => ("gradcam", to_value(a), gradcam(a, cli.seed.unwrap_or(0), &out)?),
    };
    RunMeta::new(name, argv, seed, settings).write(&out)?;
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("arguments serialise")
}

fn parse_mix(s: &str) -> std::result::Result<[f64; 4], Failure> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| usage(format!("--class-mix: {e}")))?;
    parts.try_into().map_err(|_| usage("--class-mix needs exactly four fractions"))
}

fn synth(a: &SynthArgs, seed: u64, out: &Path) -> std::result::Result<u64, Failure> {
    let params = SynthParams {
        n_scenes: a.scenes,
        buildings_per_scene: a.buildings_per_scene,
        image_side: a.image_side,
        class_mix: parse_mix(&a.class_mix)?,
        noise_floor: a.noise_floor,
        seed,
        min_box: a.min_box,
        max_box: a.max_box,
        type_bias: a.type_bias,
    };
    let log = write_synth_root(&params, out)?;
    let rep = separability_report(out)?;
    write_json(
        &out.join("separability.json"),
        &serde_json::json!({
            "mean_abs_difference": rep.mean_difference,
            "counts": rep.counts,
            "strictly_increasing": rep.strictly_increasing(),
        }),
    )?;
    println!("wrote {} scenes with {} buildings to {}", params.n_scenes, log.buildings.len(), out.display());
    Ok(seed)
}

fn preprocess(a: &PreprocessArgs, seed: u64, out: &Path) -> std::result::Result<u64, Failure> {
    let opts = PreprocessOptions {
        crop: CropOptions { min_area: a.min_area, crop_side: a.crop_side, pad: a.pad },
        ratio: a.ratio,
        seed,
    };
    let o = preprocess_root(&a.root, &opts)?;
    write_manifest(&o.split, &o.records, out)?;
    let mut kept = [0usize; 4];
    o.records.iter().for_each(|r| kept[r.label.index()] += 1);
    write_json(
        &out.join("preprocess_summary.json"),
        &serde_json::json!({
            "parsed_buildings": o.parsed,
            "kept_buildings": o.records.len(),
            "kept_per_class": kept,
            "train": o.split.train.len(),
            "val": o.split.val.len(),
            "skipped_scenes": o.skipped,
            "area_histogram": area_histogram(&o.areas)
                .into_iter()
                .map(|(lo, hi, n)| serde_json::json!({"min": lo, "max_exclusive": hi, "count": n}))
                .collect::<Vec<_>>(),
        }),
    )?;
    println!("kept {} of {} buildings; {} train / {} val", o.records.len(), o.parsed, o.split.train.len(), o.split.val.len());
    Ok(seed)
}

fn apply_overrides(hp: &mut HyperParams, o: &HpOverrides, seed: Option<u64>) -> Result<()> {
    if let Some(e) = o.epochs {
        hp.epochs = e;
    }
    if let Some(b) = o.batch_size {
        hp.batch_size = b;
    }
    if let Some(l) = o.learning_rate {
        hp.learning_rate = l;
    }
    if let Some(s) = seed {
        hp.seed = s;
    }
    hp.validate()?;
    Ok(())
}

fn pretrained_weights(backbone: BackboneKind, explicit: Option<&Path>) -> Result<Option<WeightSet>> {
    match backbone {
        BackboneKind::TinyResnet => Ok(None),
        BackboneKind::Resnet18Pretrained => Ok(Some(load_pretrained(&resolve_pretrained(explicit)?)?)),
    }
}

fn train(a: &TrainArgs, seed: Option<u64>, out: &Path) -> std::result::Result<u64, Failure> {
    let file = match &a.config {
        Some(p) => RunFile::load(p)?,
        None => RunFile::default(),
    };
    let m = read_manifest(&a.manifest)?;
    let config = file.model_config(m.crop_side())?;
    let mut hp = file.hyper_params()?;
    apply_overrides(&mut hp, &a.hp, seed)?;
    let model = match &a.checkpoint {
        Some(p) => load_checkpoint(p)?.into_model(Some(&config))?,
        None => {
            let w = pretrained_weights(config.backbone, a.weights.as_deref())?;
            build_model(&config, w.as_ref(), hp.seed)?
        }
    };
    let outcome = train_model(model, &hp, &m.records, &m.split, &mut |s| {
        log::info!("epoch {:>3}  loss {:.5}  val acc {:.4}", s.epoch, s.train_loss, s.val_accuracy)
    })?;
    let mut best = outcome.best_model;
    std::fs::create_dir_all(out).map_err(|e| LabError::Io { path: out.into(), source: e })?;
    std::fs::write(out.join("config.toml"), RunFile::from_parts(&config, &hp).to_toml())
        .map_err(|e| LabError::Io { path: out.join("config.toml"), source: e })?;
    save_checkpoint(&out.join(CHECKPOINT_FILE), &mut best, &checkpoint_extra(&hp, &outcome.report.split_checksum))?;
    write_report(&out.join(REPORT_FILE), &outcome.report)?;
    println!(
        "best val accuracy {:.4} at epoch {} (final {:.4})",
        outcome.report.best_val_accuracy, outcome.report.best_epoch, outcome.report.final_val_accuracy
    );
    Ok(hp.seed)
}

fn checkpoint_extra(hp: &HyperParams, split_checksum: &str) -> Vec<(&'static str, String)> {
    vec![("hyper_params", hp.canonical()), ("split_checksum", split_checksum.to_string())]
}

fn select<'a>(
    records: &'a [BuildingRecord],
    split: &SplitManifest,
    which: &str,
) -> std::result::Result<Vec<&'a BuildingRecord>, Failure> {
    let idx: Vec<usize> = match which {
        "train" => split.train.clone(),
        "val" => split.val.clone(),
        "all" => split.train.iter().chain(&split.val).copied().collect(),
        other => return Err(usage(format!("--split must be train, val or all, not `{other}`"))),
    };
    Ok(idx.into_iter().map(|i| &records[i]).collect())
}

fn eval(a: &EvalArgs, out: &Path) -> std::result::Result<u64, Failure> {
    let m = read_manifest(&a.manifest)?;
    let records = select(&m.records, &m.split, &a.split)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let config = ck.config.clone();
    let mut model = ck.into_model(None)?;
    let e = evaluate(&mut model, &records)?;
    write_json(&out.join("eval.json"), &EvaluationJson::new(&config, &e))?;
    println!("accuracy {:.4} over {} records", e.accuracy, e.total());
    Ok(0)
}

/// Trains the nine cells, saving each best checkpoint and report under
/// `out`. With `jobs > 1` cells run on worker threads; every cell is seeded
/// identically either way, so the grid does not depend on `jobs`.
#[allow(clippy::too_many_arguments)]
pub fn run_grid(
    hp: &HyperParams,
    records: &[BuildingRecord],
    split: &SplitManifest,
    backbone: BackboneKind,
    crop_side: usize,
    weights: Option<&WeightSet>,
    jobs: usize,
    out: &Path,
) -> Result<ComparisonGrid> {
    let combos: Vec<(InputModality, LossKind)> =
        InputModality::ALL.iter().flat_map(|&m| LossKind::ALL.iter().map(move |&l| (m, l))).collect();
    let run_cell = |(modality, loss): (InputModality, LossKind)| -> Result<GridCell> {
        let config = ModelConfig::new(modality, loss, backbone, crop_side);
        let model = build_model(&config, weights, hp.seed)?;
        let outcome = train_model(model, hp, records, split, &mut |s| {
            log::debug!("{modality}/{loss} epoch {} val acc {:.4}", s.epoch, s.val_accuracy)
        })?;
        let stem = format!("{}_{}", modality.tag(), loss.tag());
        let mut best = outcome.best_model;
        save_checkpoint(
            &out.join("checkpoints").join(format!("{stem}.safetensors")),
            &mut best,
            &checkpoint_extra(hp, &outcome.report.split_checksum),
        )?;
        write_report(&out.join("reports").join(format!("{stem}.json")), &outcome.report)?;
        log::info!("{modality}/{loss}: best val accuracy {:.4}", outcome.report.best_val_accuracy);
        Ok(GridCell { modality, loss, report: outcome.report })
    };
    let cells: Vec<GridCell> = if jobs <= 1 {
        combos.into_iter().map(run_cell).collect::<Result<_>>()?
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let mut slots: Vec<Option<Result<GridCell>>> = (0..combos.len()).map(|_| None).collect();
        let results = std::sync::Mutex::new(&mut slots);
        std::thread::scope(|s| {
            for _ in 0..jobs.min(combos.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    let Some(&combo) = combos.get(i) else { break };
                    let r = run_cell(combo);
                    results.lock().expect("no worker panicked")[i] = Some(r);
                });
            }
        });
        slots.into_iter().map(|r| r.expect("every cell ran")).collect::<Result<_>>()?
    };
    Ok(ComparisonGrid { cells, hyper_params: hp.clone() })
}

fn compare(a: &CompareArgs, seed: Option<u64>, out: &Path) -> std::result::Result<u64, Failure> {
    if a.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let file = match &a.config {
        Some(p) => RunFile::load(p)?,
        None => RunFile::default(),
    };
    let m = read_manifest(&a.manifest)?;
    let mut hp = file.hyper_params()?;
    apply_overrides(&mut hp, &a.hp, seed)?;
    let backbone: BackboneKind = a.backbone.as_deref().unwrap_or(&file.backbone).parse()?;
    let crop_side = file.crop_side.or(m.crop_side()).ok_or(damage_core::Error::EmptyEvalSet)?;
    let weights = pretrained_weights(backbone, a.weights.as_deref())?;
    let grid = run_grid(&hp, &m.records, &m.split, backbone, crop_side, weights.as_ref(), a.jobs, out)?;
    let md = grid.render_markdown(a.show_paper_ref);
    std::fs::write(out.join(GRID_FILE), &md).map_err(|e| LabError::Io { path: out.join(GRID_FILE), source: e })?;
    write_json(&out.join("grid.json"), &grid_json(&grid))?;
    print!("{md}");
    Ok(hp.seed)
}

fn gradcam(a: &GradcamArgs, seed: u64, out: &Path) -> std::result::Result<u64, Failure> {
    let class_from: ClassFrom = a.class_from.parse()?;
    let m = read_manifest(&a.manifest)?;
    let mut model = load_checkpoint(&a.checkpoint)?.into_model(None)?;
    let mut records = m.val_records();
    if let Some(n) = a.limit {
        // keep the first records of each class so the contact sheet fills
        let mut taken = [0usize; 4];
        records.retain(|r| {
            let t = &mut taken[r.label.index()];
            *t += 1;
            *t <= n.div_ceil(4)
        });
        records.truncate(n);
    }
    let opts = CamOptions { layer: a.layer.clone(), alpha: a.alpha, class_from };
    let paths = cam_batch(&mut model, &records, out, &opts)?;
    println!("wrote {} images to {}", paths.len(), out.display());
    Ok(seed)
}
