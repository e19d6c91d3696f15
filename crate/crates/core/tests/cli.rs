use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavepolyp"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn analyze_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["analyze", "--synth-seed", "7", "--count", "50", "--chroma-mode", "opposed", "--out", "a.csv"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(text(&out.stdout).contains("GRAY > RGB_MEAN in 9/9 detail bands (3 levels)"));
    let meta = json(&dir.path().join("a.config.json"));
    assert_eq!(meta["config"]["source"]["synth"]["seed"], 7);
    assert_eq!(meta["gray_higher"], 9);

    let out = run(&["analyze", "--count", "10", "--chroma-mode", "achromatic", "--out", "b.csv"], dir.path());
    assert!(text(&out.stdout).contains("GRAY = RGB_MEAN within tolerance in 9/9"));
}

#[test]
fn missing_mask_directory_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["synth", "--count", "3", "--out", "c"], dir.path()).status.code(), Some(0));
    fs::remove_dir_all(dir.path().join("c/masks")).unwrap();
    let out = run(&["analyze", "--data", "c", "--out", "x.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("c/masks"));
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), "count = 4\nsynth_seed = 5\nsize = 32\nout = fromfile\n").unwrap();
    assert_eq!(run(&["--config", "run.cfg", "synth"], dir.path()).status.code(), Some(0));
    let m = json(&dir.path().join("fromfile/manifest.json"));
    assert_eq!((m["config"]["count"].as_u64(), m["config"]["seed"].as_u64()), (Some(4), Some(5)));

    assert_eq!(run(&["synth", "--config", "run.cfg", "--count", "2", "--out", "flag"], dir.path()).status.code(), Some(0));
    let m = json(&dir.path().join("flag/manifest.json"));
    assert_eq!((m["config"]["count"].as_u64(), m["config"]["size"].as_u64()), (Some(2), Some(32)));

    fs::write(dir.path().join("bad.cfg"), "cuont = 4\n").unwrap();
    let out = run(&["--config", "bad.cfg", "synth", "--out", "z"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("unknown key 'cuont'"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["frobnicate"][..],
        &["synth", "--size", "48", "--out", "x"],
        &["train", "--lr", "-1", "--out", "x"],
        &["eval", "--baseline", "oracle", "--checkpoint", "nope.ckpt"],
        &["infer", "--checkpoint", "nope.ckpt", "--image", "nope.png", "--out", "m.png"],
    ] {
        assert_eq!(run(args, dir.path()).status.code(), Some(2), "{args:?}");
    }
    assert_eq!(run(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn train_eval_infer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(&["synth", "--count", "10", "--size", "32", "--out", "corpus"], d).status.code(), Some(0));
    let common = ["--data", "corpus", "--val-fraction", "0", "--test-fraction", "0"];

    let mut args = vec!["train", "--epochs", "2", "--batch-size", "4", "--ablate", "rgb_only", "--out", "rgb"];
    args.extend(common);
    let out = run(&args, d);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let h = json(&d.join("rgb/history.json"));
    assert_eq!(h["mode"], "rgb_only");
    assert_eq!(h["epochs"].as_array().unwrap().len(), 2);
    let rgb_params = h["param_count"].as_u64().unwrap();

    let mut args = vec!["train", "--epochs", "1", "--seed", "2", "--out", "full"];
    args.extend(common);
    assert_eq!(run(&args, d).status.code(), Some(0));
    assert!(json(&d.join("full/history.json"))["param_count"].as_u64().unwrap() > rgb_params);

    // Two runs, labelled by seed, with a CSV row each.
    let mut args = vec![
        "eval", "--checkpoint", "rgb/model.ckpt", "--checkpoint", "rgb/model.ckpt", "--seeds", "1,2", "--split", "train", "--out",
        "m.json", "--csv", "m.csv",
    ];
    args.extend(common);
    assert_eq!(run(&args, d).status.code(), Some(0));
    let m = json(&d.join("m.json"));
    assert_eq!(m["per_run"].as_array().unwrap().len(), 2);
    assert_eq!(m["dice_std"], 0.0);
    assert_eq!(fs::read_to_string(d.join("m.csv")).unwrap().lines().count(), 3);

    // Wrong expected topology: exit 2 with a field and shape diff.
    let mut args = vec!["eval", "--checkpoint", "rgb/model.ckpt", "--ablate", "full", "--split", "train"];
    args.extend(common);
    let out = run(&args, d);
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("mode: expected full, found rgb_only"), "{err}");
    assert!(err.contains("gray.stem.weight: expected [16, 3, 3, 3], missing"), "{err}");

    for (t, frac) in [("1.0", 0.0), ("0.0", 1.0)] {
        let out = run(
            &["infer", "--checkpoint", "rgb/model.ckpt", "--image", "corpus/images/synth_00000.png", "--out", "p.png", "--threshold", t],
            d,
        );
        assert_eq!(out.status.code(), Some(0));
        assert_eq!(json(&d.join("p.json"))["polyp_fraction"], frac);
        let img = image::open(d.join("p.png")).unwrap().to_luma8();
        let want = if frac == 1.0 { 255 } else { 0 };
        assert!(img.pixels().all(|p| p.0[0] == want));
    }
}

#[test]
fn infer_pads_and_crops_odd_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ckpt = wavepolyp::model::SegModel::new(Default::default(), 1).unwrap();
    ckpt.save(&d.join("m.ckpt")).unwrap();
    image::RgbImage::from_pixel(40, 50, image::Rgb([120, 90, 80])).save(d.join("odd.png")).unwrap();
    let out = run(&["infer", "--checkpoint", "m.ckpt", "--image", "odd.png", "--out", "o.png"], d);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).starts_with("polyp fraction "));
    let meta = json(&d.join("o.json"));
    assert_eq!(meta["input_size"], serde_json::json!([50, 40]));
    assert_eq!(meta["padded_size"], serde_json::json!([64, 64]));
    assert_eq!(image::open(d.join("o.png")).unwrap().to_luma8().dimensions(), (40, 50));
}

#[test]
fn eval_baselines_and_min_dice() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let base = ["eval", "--count", "20", "--size", "32", "--split", "train"];
    let mut args = base.to_vec();
    args.extend(["--baseline", "oracle", "--min-dice", "0.99"]);
    let out = run(&args, d);
    assert_eq!(out.status.code(), Some(0));
    let m: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!((m["dice_mean"].as_f64(), m["iou_mean"].as_f64(), m["dice_std"].as_f64()), (Some(1.0), Some(1.0), Some(0.0)));

    let mut args = base.to_vec();
    args.extend(["--baseline", "background", "--min-dice", "0.5"]);
    let out = run(&args, d);
    assert_eq!(out.status.code(), Some(1));
    let m: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(m["dice_mean"], 0.0);
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["selftest"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let s = text(&out.stdout);
    assert!(s.lines().filter(|l| l.starts_with("PASS")).count() >= 15);
    assert!(!s.contains("FAIL"));
}
