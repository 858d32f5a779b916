//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs the desk-scale training experiments, so it takes minutes.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use damage_core::gradcam::{cam_from_parts, grad_cam};
use damage_core::losses::{cross_entropy, mse_loss, ordinal_ce, ordinal_encode, Probs4, Sigmoid3};
use damage_core::model::Model;
use damage_core::preprocess::extract_records;
use damage_core::synth::SynthParams;
use damage_core::train::{evaluate, train, Classifier, HyperParams, TrainOutcome};
use damage_core::{
    encode_input, BackboneKind, BuildingRecord, CropOptions, DamageClass, DisasterType, EncodedInput, InputModality, LossKind,
    ModelConfig, Result as CoreResult, RgbImage,
};
use damage_lab::cam::{cam_batch, CamOptions};
use damage_lab::checkpoint::encode_checkpoint;
use damage_lab::cli::run_grid;
use damage_lab::ingest::{index_dataset, load_scene};
use damage_lab::manifest::{preprocess_root, read_manifest, write_manifest, LoadedManifest, PreprocessOptions};
use damage_lab::synthio::write_synth_root;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// tolerances and budgets
const FD_POINTS: usize = 100;
const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
const CLOSED_FORM_TOL: f64 = 1e-9;
const SATURATION_EPS: f64 = 1e-6;
const DISTANCE_REL_TOL: f64 = 0.01;
const MIN_AREA: u64 = 2000;
const SPLIT_RATIO: f64 = 0.8;
const DESK_ACCURACY: f64 = 0.80;
const BLIND_ACCURACY: f64 = 0.25;
const CAM_PAIRS: u64 = 50;
const CAM_TOY_TOL: f64 = 1e-9;

// desk-scale experiment
const CROP_SIDE: usize = 32;
const DESK_SEED: u64 = 0;
const XBD_ENV: &str = "DAMAGE_LAB_XBD_ROOT";

fn desk_hp() -> HyperParams {
    HyperParams { learning_rate: 0.001, batch_size: 32, epochs: 20, seed: DESK_SEED }
}

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn class(k: u8) -> DamageClass {
    DamageClass::new(k).unwrap()
}

fn c1_ordinal_codes() -> Check {
    let codes: Vec<[u8; 3]> = (0..4).map(|k| ordinal_encode(class(k)).0).collect();
    ensure(codes == [[0, 0, 0], [1, 0, 0], [1, 1, 0], [1, 1, 1]], format!("codes {codes:?}"))?;
    Ok("four cumulative codes exact".into())
}

fn c2_gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_all: f64 = 0.0;
    for kind in LossKind::ALL {
        let w = kind.head_width();
        let mut worst: f64 = 0.0;
        for _ in 0..FD_POINTS {
            let b = rng.random_range(1..=4);
            let x: Vec<f64> = (0..b * w).map(|_| rng.random_range(-4.0..4.0)).collect();
            let t: Vec<DamageClass> = (0..b).map(|_| class(rng.random_range(0..4))).collect();
            let (_, g) = kind.batch_loss(&x, &t).map_err(|e| e.to_string())?;
            for i in 0..x.len() {
                let (mut up, mut dn) = (x.clone(), x.clone());
                up[i] += FD_STEP;
                dn[i] -= FD_STEP;
                let fd = (kind.batch_loss(&up, &t).unwrap().0 - kind.batch_loss(&dn, &t).unwrap().0) / (2.0 * FD_STEP);
                worst = worst.max((g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1.0));
            }
        }
        ensure(worst <= FD_REL_TOL, format!("{kind}: max relative error {worst:.2e}"))?;
        worst_all = worst_all.max(worst);
    }
    Ok(format!("{FD_POINTS} points per loss, max relative error {worst_all:.2e}"))
}

fn c3_closed_forms() -> Check {
    for t in 0..4 {
        let ce = cross_entropy(&Probs4::new([0.25; 4]).unwrap(), class(t));
        ensure((ce - 4f64.ln()).abs() <= CLOSED_FORM_TOL, format!("uniform CE {ce}"))?;
        let oc = ordinal_ce(&Sigmoid3::new([0.5; 3]).unwrap(), class(t));
        ensure((oc - 3.0 * 2f64.ln()).abs() <= CLOSED_FORM_TOL, format!("all-half ordinal {oc}"))?;
    }
    let mse = [
        (mse_loss(&[3.0], &[class(3)]).unwrap(), 0.0),
        (mse_loss(&[1.0, 2.0], &[class(0), class(2)]).unwrap(), 0.5),
        (mse_loss(&[0.0], &[class(3)]).unwrap(), 9.0),
    ];
    ensure(mse.iter().all(|(a, b)| a == b), format!("mse examples {mse:?}"))?;
    Ok("ln 4, 3 ln 2 and MSE examples".into())
}

fn c4_ordinal_distance() -> Check {
    let unit = (1.0 / SATURATION_EPS).ln();
    let mut worst: f64 = 0.0;
    for c in 0..4u8 {
        for p in 0..4usize {
            let s = Sigmoid3::new(std::array::from_fn(|i| if i < p { 1.0 - SATURATION_EPS } else { SATURATION_EPS })).unwrap();
            let l = ordinal_ce(&s, class(c));
            let want = (c as f64 - p as f64).abs() * unit;
            // a distance of zero has no relative scale; it is measured in units of ln(1/ε)
            let err = (l - want).abs() / want.max(unit);
            ensure(err <= DISTANCE_REL_TOL, format!("c={c} ĉ={p}: {l} vs {want}"))?;
            worst = worst.max(err);
        }
    }
    Ok(format!("16 pairs, worst relative error {worst:.2e}"))
}

struct Data {
    _dir: tempfile::TempDir,
    manifest: LoadedManifest,
}

fn synth_manifest(params: &SynthParams, dir: &Path, seed: u64) -> damage_lab::Result<(LoadedManifest, usize)> {
    let root = dir.join("root");
    let log = write_synth_root(params, &root)?;
    let opts =
        PreprocessOptions { crop: CropOptions { min_area: MIN_AREA, crop_side: CROP_SIDE, pad: 0 }, ratio: SPLIT_RATIO, seed };
    let out = preprocess_root(&root, &opts)?;
    let eligible = log.buildings.iter().filter(|b| b.area >= MIN_AREA).count();
    if out.records.len() != eligible {
        return Err(damage_core::Error::InvalidParams(format!("{} kept, {eligible} eligible", out.records.len())).into());
    }
    write_manifest(&out.split, &out.records, &dir.join("manifest"))?;
    Ok((read_manifest(&dir.join("manifest"))?, eligible))
}

fn per_class(m: &LoadedManifest, idx: &[usize]) -> [usize; 4] {
    let mut n = [0; 4];
    for &i in idx {
        n[m.records[i].label.index()] += 1;
    }
    n
}

fn c5_preprocess(store: &mut Option<Data>) -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let params = SynthParams { n_scenes: 20, buildings_per_scene: 100, seed: 5, ..SynthParams::default() };
    let (m, eligible) = synth_manifest(&params, dir.path(), 5).map_err(|e| e.to_string())?;
    ensure(m.records.iter().all(|r| r.bbox_area >= MIN_AREA), "record below the area threshold")?;
    ensure(eligible < 2000, "fixture never exercised the area filter")?;
    let (train_ids, val_ids): (BTreeSet<&str>, BTreeSet<&str>) = (
        m.split.train.iter().map(|&i| m.records[i].uid.as_str()).collect(),
        m.split.val.iter().map(|&i| m.records[i].uid.as_str()).collect(),
    );
    ensure(train_ids.is_disjoint(&val_ids), "train and val overlap")?;
    let (tr, va) = (per_class(&m, &m.split.train), per_class(&m, &m.split.val));
    ensure(tr.iter().all(|&n| n == tr[0]), format!("train per class {tr:?}"))?;
    ensure(va.iter().all(|&n| n == va[0]), format!("val per class {va:?}"))?;
    let expect = SPLIT_RATIO * (tr[0] + va[0]) as f64;
    ensure((tr[0] as f64 - expect).abs() <= 1.0, format!("{} train per class, expected {expect}", tr[0]))?;
    let msg = format!("2000 buildings, {eligible} over threshold, per class {} train / {} val", tr[0], va[0]);
    *store = Some(Data { _dir: dir, manifest: m });
    Ok(msg)
}

fn noise(side: usize, rng: &mut ChaCha8Rng) -> RgbImage {
    RgbImage::from_raw(side, side, (0..side * side * 3).map(|_| rng.random()).collect()).unwrap()
}

fn record(pre: RgbImage, post: RgbImage, label: DamageClass, t: DisasterType) -> BuildingRecord {
    BuildingRecord {
        crop_pre: pre,
        crop_post: post,
        label,
        disaster_type: t,
        bbox_area: MIN_AREA,
        scene_id: "s".into(),
        uid: "u".into(),
    }
}

fn c6_stem_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (backbone, seed) in [(BackboneKind::TinyResnet, 1), (BackboneKind::TinyResnet, 2), (BackboneKind::Resnet18Pretrained, 3)]
    {
        let cfg3 = ModelConfig::new(InputModality::PostOnly, LossKind::CrossEntropy, backbone, CROP_SIDE);
        let cfg6 = ModelConfig { modality: InputModality::PrePost, ..cfg3.clone() };
        let mut m3 = Model::random(&cfg3, seed).map_err(|e| e.to_string())?;
        let mut m6 = Model::random(&cfg6, seed + 100).map_err(|e| e.to_string())?;
        m6.load_weights(&m3.export_weights(), true).map_err(|e| e.to_string())?;
        let recs: Vec<BuildingRecord> = (0..2)
            .map(|_| {
                let img = noise(CROP_SIDE, &mut rng);
                record(img.clone(), img, DamageClass::NO_DAMAGE, DisasterType::Fire)
            })
            .collect();
        let x3: Vec<EncodedInput> = recs.iter().map(|r| encode_input(r, InputModality::PostOnly).unwrap()).collect();
        let x6: Vec<EncodedInput> = recs.iter().map(|r| encode_input(r, InputModality::PrePost).unwrap()).collect();
        let a = m3.forward(&x3.iter().collect::<Vec<_>>(), false, false, false).map_err(|e| e.to_string())?;
        let b = m6.forward(&x6.iter().collect::<Vec<_>>(), false, false, false).map_err(|e| e.to_string())?;
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        ensure(bits(&a) == bits(&b), format!("{backbone:?}: {a:?} vs {b:?}"))?;
    }
    Ok("tiny and 18-layer stems bit-identical".into())
}

struct Constant(DamageClass);

impl Classifier for Constant {
    fn classify(&mut self, r: &[&BuildingRecord]) -> CoreResult<Vec<DamageClass>> {
        Ok(vec![self.0; r.len()])
    }
}

fn c7_blind_baseline(data: Option<&Data>) -> Check {
    let m = &data.ok_or("criterion 5 data unavailable")?.manifest;
    let val = m.val_records();
    for c in DamageClass::ALL {
        let acc = evaluate(&mut Constant(c), &val).map_err(|e| e.to_string())?.accuracy;
        ensure(acc == BLIND_ACCURACY, format!("constant {c:?} scored {acc}"))?;
    }
    Ok(format!("each constant class scores 0.25 on {} val records", val.len()))
}

struct Desk {
    _dir: tempfile::TempDir,
    manifest: LoadedManifest,
    outcome: TrainOutcome,
    config: ModelConfig,
}

fn desk_config() -> ModelConfig {
    ModelConfig::new(InputModality::PostOnly, LossKind::CrossEntropy, BackboneKind::TinyResnet, CROP_SIDE)
}

fn desk_params() -> SynthParams {
    SynthParams { n_scenes: 8, buildings_per_scene: 100, min_box: 45, seed: DESK_SEED, ..SynthParams::default() }
}

fn c8_desk_run(store: &mut Option<Desk>) -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (manifest, n) = synth_manifest(&desk_params(), dir.path(), DESK_SEED).map_err(|e| e.to_string())?;
    ensure(n == 800 && manifest.records.len() == 800, format!("{n} crops, expected 800"))?;
    let config = desk_config();
    let outcome = train(&config, &desk_hp(), &manifest.records, &manifest.split, None).map_err(|e| e.to_string())?;
    let best = outcome.report.best_val_accuracy;
    let msg = format!("best val accuracy {best:.4} at epoch {}", outcome.report.best_epoch);
    *store = Some(Desk { _dir: dir, manifest, outcome, config });
    ensure(best > BLIND_ACCURACY, format!("{msg}, no better than blind guessing"))?;
    ensure(best >= DESK_ACCURACY, format!("{msg}, need ≥ {DESK_ACCURACY}"))?;
    Ok(msg)
}

fn c9_grid(desk: Option<&Desk>) -> Check {
    let d = desk.ok_or("criterion 8 data unavailable")?;
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m = &d.manifest;
    let grid = run_grid(&desk_hp(), &m.records, &m.split, BackboneKind::TinyResnet, CROP_SIDE, None, 1, out.path())
        .map_err(|e| e.to_string())?;
    ensure(grid.is_complete(), format!("{} cells", grid.cells.len()))?;
    let sums: BTreeSet<&str> = grid.cells.iter().map(|c| c.report.split_checksum.as_str()).collect();
    let seeds: BTreeSet<u64> = grid.cells.iter().map(|c| c.report.seed).collect();
    ensure(sums.len() == 1 && seeds.len() == 1, "cells do not share one split and seed")?;
    let with_ref = grid.render_markdown(true);
    let row = |title: &str| with_ref.lines().find(|l| l.starts_with(&format!("| {title} |"))).unwrap_or("").to_string();
    let (post, full) = (row(InputModality::PostOnly.title()), row(InputModality::PrePostType.title()));
    // columns: input, then (accuracy, reference) per loss in mse, ce, ordinal order
    let col = |r: &str, i: usize| r.split('|').map(str::trim).nth(i + 1).unwrap_or("").to_string();
    ensure(col(&post, 4) == "59.5%", format!("post-only/ce reference `{}`", col(&post, 4)))?;
    ensure(col(&full, 6) == "74.6%", format!("pre+post+type/ordinal reference `{}`", col(&full, 6)))?;
    let files = |sub: &str| std::fs::read_dir(out.path().join(sub)).map(|d| d.count()).unwrap_or(0);
    ensure(files("checkpoints") == 9 && files("reports") == 9, "per-cell checkpoints or reports missing")?;
    let accs: Vec<String> = grid.cells.iter().map(|c| format!("{:.2}", c.report.best_val_accuracy)).collect();
    Ok(format!("9 cells, one split; best accuracies [{}]", accs.join(" ")))
}

fn c10_gradcam(desk: Option<&mut Desk>) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let side = 16;
    for i in 0..CAM_PAIRS {
        let modality = InputModality::ALL[i as usize % 3];
        let loss = LossKind::ALL[(i / 3) as usize % 3];
        let cfg = ModelConfig::new(modality, loss, BackboneKind::TinyResnet, side);
        let mut m = Model::random(&cfg, i).map_err(|e| e.to_string())?;
        let r = record(
            noise(side, &mut rng),
            noise(side, &mut rng),
            class(rng.random_range(0..4)),
            DisasterType::ALL[i as usize % 6],
        );
        let x = encode_input(&r, modality).map_err(|e| e.to_string())?;
        let layer = m.last_conv_layer();
        let cam = grad_cam(&mut m, &x, r.label, &layer).map_err(|e| e.to_string())?;
        ensure(cam.map.iter().chain(&cam.upsampled).all(|&v| v >= 0.0), format!("negative map value, pair {i}"))?;
    }

    let acts: Vec<f32> = (0..3).flat_map(|k| vec![k as f32 + 0.5; 16]).collect();
    let grads: Vec<f32> = (0..48).map(|i| (i % 7) as f32 * 0.125).collect();
    let (map, up) = cam_from_parts(&acts, &grads, 3, 4, 4, 8).map_err(|e| e.to_string())?;
    ensure(map.iter().all(|&v| v == map[0]) && up.iter().all(|&v| v == up[0]), "uniform activations gave a non-constant map")?;

    // A_0 = x, A_1 = 1, gradient means 0.5 and -1: ReLU(0.5 x - 1) on x = 0..3
    let acts = [0.0f32, 1.0, 2.0, 3.0, 1.0, 1.0, 1.0, 1.0];
    let grads = [0.5f32, 0.5, 0.5, 0.5, -2.0, 0.0, -1.0, -1.0];
    let (map, _) = cam_from_parts(&acts, &grads, 2, 2, 2, 2).map_err(|e| e.to_string())?;
    let want = [0.0, 0.0, 0.0, 0.5];
    ensure(map.iter().zip(want).all(|(g, w)| (*g as f64 - w).abs() <= CAM_TOY_TOL), format!("toy map {map:?}"))?;

    let d = desk.ok_or("criterion 8 model unavailable")?;
    let recs: Vec<&BuildingRecord> = d.manifest.val_records().into_iter().take(8).collect();
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let pa = cam_batch(&mut d.outcome.best_model, &recs, a.path(), &CamOptions::default()).map_err(|e| e.to_string())?;
    let pb = cam_batch(&mut d.outcome.best_model, &recs, b.path(), &CamOptions::default()).map_err(|e| e.to_string())?;
    let read = |p: &PathBuf| std::fs::read(p).unwrap_or_default();
    ensure(pa.len() == pb.len() && pa.iter().zip(&pb).all(|(x, y)| read(x) == read(y)), "panels differ across reruns")?;
    Ok(format!("{CAM_PAIRS} random pairs non-negative; flat and toy maps exact; {} files byte-identical", pa.len()))
}

fn c11_determinism(desk: Option<&mut Desk>) -> Check {
    let d = desk.ok_or("criterion 8 run unavailable")?;
    let mut again = train(&d.config, &desk_hp(), &d.manifest.records, &d.manifest.split, None).map_err(|e| e.to_string())?;
    ensure(again.report == d.outcome.report, "TrainRunReport differs")?;
    let a = encode_checkpoint(&mut d.outcome.best_model, &[]).map_err(|e| e.to_string())?;
    let b = encode_checkpoint(&mut again.best_model, &[]).map_err(|e| e.to_string())?;
    ensure(a == b, "checkpoint bytes differ")?;
    Ok(format!("report and checkpoint identical, digest {}", &again.report.checkpoint_digest[..16]))
}

fn c12_real_data() -> Verdict {
    let Some(root) = std::env::var_os(XBD_ENV) else {
        return Verdict::Skip(format!("{XBD_ENV} not set"));
    };
    let check = || -> Check {
        let index = index_dataset(Path::new(&root)).map_err(|e| e.to_string())?;
        let files = index.scenes.first().ok_or("no complete scene")?;
        let scene = load_scene(files).map_err(|e| e.to_string())?;
        let opts = CropOptions { crop_side: CROP_SIDE, ..CropOptions::default() };
        let kept = extract_records(&scene, &opts);
        let parsed: BTreeSet<&str> = scene.annotations.iter().map(|a| a.uid.as_str()).collect();
        ensure(kept.iter().all(|r| parsed.contains(r.uid.as_str())), "kept record not among parsed")?;
        ensure(kept.len() <= scene.annotations.len(), "filter added records")?;
        ensure(
            kept.iter().all(|r| r.crop_pre.width() == CROP_SIDE && r.crop_post.height() == CROP_SIDE),
            "crop dimensions wrong",
        )?;
        Ok(format!("{}: {} parsed, {} kept", scene.scene_id, scene.annotations.len(), kept.len()))
    };
    match check() {
        Ok(m) => Verdict::Pass(m),
        Err(m) => Verdict::Fail(m),
    }
}

fn verdict(f: impl FnOnce() -> Check) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(m)) => Verdict::Pass(m),
        Ok(Err(m)) => Verdict::Fail(m),
        Err(p) => Verdict::Fail(
            p.downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or("panic".into()),
        ),
    }
}

fn report(n: usize, name: &str, started: Instant, v: Verdict) -> bool {
    let secs = started.elapsed().as_secs_f64();
    let (tag, msg, ok) = match v {
        Verdict::Pass(m) => ("PASS", m, true),
        Verdict::Fail(m) => ("FAIL", m, false),
        Verdict::Skip(m) => ("SKIP", m, true),
    };
    println!("criterion {n:>2} {tag} {name}: {msg} ({secs:.1}s)");
    ok
}

fn main() {
    // `cargo test -- <filter>` style arguments are accepted and ignored
    let mut ok = true;
    let mut data = None;
    let mut desk = None;
    let t = Instant::now();
    ok &= report(1, "ordinal encoding oracle", t, verdict(c1_ordinal_codes));
    let t = Instant::now();
    ok &= report(2, "loss gradient checks", t, verdict(c2_gradients));
    let t = Instant::now();
    ok &= report(3, "closed-form loss values", t, verdict(c3_closed_forms));
    let t = Instant::now();
    ok &= report(4, "ordinal distance property", t, verdict(c4_ordinal_distance));
    let t = Instant::now();
    ok &= report(5, "preprocessing invariants", t, verdict(|| c5_preprocess(&mut data)));
    let t = Instant::now();
    ok &= report(6, "stem adaptation identity", t, verdict(c6_stem_identity));
    let t = Instant::now();
    ok &= report(7, "blind baseline calibration", t, verdict(|| c7_blind_baseline(data.as_ref())));
    let t = Instant::now();
    ok &= report(8, "desk-scale end-to-end learning", t, verdict(|| c8_desk_run(&mut desk)));
    let t = Instant::now();
    ok &= report(9, "grid harness completeness", t, verdict(|| c9_grid(desk.as_ref())));
    let t = Instant::now();
    ok &= report(10, "grad-cam properties", t, verdict(|| c10_gradcam(desk.as_mut())));
    let t = Instant::now();
    ok &= report(11, "determinism", t, verdict(|| c11_determinism(desk.as_mut())));
    let t = Instant::now();
    ok &= report(12, "real-data smoke", t, c12_real_data());
    if !ok {
        std::process::exit(1);
    }
}
