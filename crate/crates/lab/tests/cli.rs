use std::path::Path;

use damage_lab::cli::run;

fn lab(args: &[&str]) -> i32 {
    let mut argv = vec!["damage-lab", "--log-level", "warn"];
    argv.extend_from_slice(args);
    run(argv)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(lab(&["frobnicate"]), 2);
    assert_eq!(lab(&["synth"]), 2, "missing --out");
    assert_eq!(lab(&["train", "--out", "/tmp/x"]), 2, "missing --manifest");
    assert_eq!(lab(&["--help"]), 0);
    assert_eq!(lab(&["--version"]), 0);
}

#[test]
fn domain_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert_eq!(lab(&["preprocess", "--root", p(&empty), "--out", p(&dir.path().join("m"))]), 1);
    assert_eq!(lab(&["synth", "--class-mix", "0.5,0.5,0.5,0.5", "--out", p(&dir.path().join("s"))]), 1);
}

#[test]
fn end_to_end_on_a_small_synthetic_root() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s);
    assert_eq!(
        lab(&[
            "synth",
            "--scenes",
            "2",
            "--buildings-per-scene",
            "16",
            "--image-side",
            "384",
            "--min-box",
            "45",
            "--max-box",
            "70",
            "--seed",
            "3",
            "--out",
            p(&d("root"))
        ]),
        0
    );
    assert!(d("root/synth_log.json").exists() && d("root/run_meta.json").exists());
    assert_eq!(lab(&["preprocess", "--root", p(&d("root")), "--crop-side", "16", "--seed", "3", "--out", p(&d("man"))]), 0);
    for f in ["manifest.jsonl", "split.json", "preprocess_summary.json", "run_meta.json"] {
        assert!(d("man").join(f).exists(), "{f}");
    }

    std::fs::write(d("ce.toml"), "modality = \"pre_post_type\"\nloss = \"ce\"\nepochs = 2\nbatch_size = 8\n").unwrap();
    for out in ["t1", "t2"] {
        assert_eq!(
            lab(&["train", "--config", p(&d("ce.toml")), "--manifest", p(&d("man")), "--seed", "5", "--out", p(&d(out))]),
            0
        );
    }
    for f in ["checkpoint.safetensors", "report.json", "config.toml"] {
        assert_eq!(std::fs::read(d("t1").join(f)).unwrap(), std::fs::read(d("t2").join(f)).unwrap(), "{f} differs across reruns");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d("t1/report.json")).unwrap()).unwrap();
    assert_eq!(report["per_epoch"].as_array().unwrap().len(), 2);
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(d("t1/run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["subcommand"], "train");
    assert_eq!(meta["seed"], 5);

    // resuming with a different loss must refuse the checkpoint
    std::fs::write(d("ord.toml"), "modality = \"pre_post_type\"\nloss = \"ordinal\"\nepochs = 1\n").unwrap();
    assert_eq!(
        lab(&[
            "train",
            "--config",
            p(&d("ord.toml")),
            "--checkpoint",
            p(&d("t1/checkpoint.safetensors")),
            "--manifest",
            p(&d("man")),
            "--out",
            p(&d("bad"))
        ]),
        1
    );

    let ck = d("t1/checkpoint.safetensors");
    assert_eq!(lab(&["eval", "--checkpoint", p(&ck), "--manifest", p(&d("man")), "--out", p(&d("ev"))]), 0);
    let ev: serde_json::Value = serde_json::from_slice(&std::fs::read(d("ev/eval.json")).unwrap()).unwrap();
    assert_eq!(ev["accuracy"], report["best_val_accuracy"]);

    for out in ["g1", "g2"] {
        assert_eq!(lab(&["gradcam", "--checkpoint", p(&ck), "--manifest", p(&d("man")), "--limit", "4", "--out", p(&d(out))]), 0);
    }
    assert_eq!(std::fs::read(d("g1/contact_sheet.png")).unwrap(), std::fs::read(d("g2/contact_sheet.png")).unwrap());
    assert_eq!(lab(&["gradcam", "--checkpoint", p(&ck), "--manifest", p(&d("man")), "--layer", "fc9", "--out", p(&d("g3"))]), 1);

    assert_eq!(
        lab(&[
            "compare",
            "--manifest",
            p(&d("man")),
            "--epochs",
            "1",
            "--batch-size",
            "16",
            "--show-paper-ref",
            "--out",
            p(&d("grid"))
        ]),
        0
    );
    let md = std::fs::read_to_string(d("grid/grid.md")).unwrap();
    assert!(md.contains("59.5%") && md.contains("74.6%"), "{md}");
    let cells: serde_json::Value = serde_json::from_slice(&std::fs::read(d("grid/grid.json")).unwrap()).unwrap();
    let cells = cells.as_array().unwrap();
    assert_eq!(cells.len(), 9);
    let sums: std::collections::BTreeSet<&str> = cells.iter().map(|c| c["report"]["split_checksum"].as_str().unwrap()).collect();
    assert_eq!(sums.len(), 1);
    assert_eq!(std::fs::read_dir(d("grid/checkpoints")).unwrap().count(), 9);
}
