use std::path::Path;
use std::process::{Command, Output};

fn focusfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_focusfuse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn synth(dir: &Path, size: &str, seed: &str) {
    let out = focusfuse(&[
        "synth", "--size", size, "--n", "3", "--max-shift", "12", "--sigma", "3", "--seed", seed, "--out",
        path(dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_fuse_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let stack = tmp.path().join("stack");
    synth(&stack, "256", "7");
    for name in ["slice_00.png", "slice_01.png", "slice_02.png", "truth.png", "synth.json"] {
        assert!(stack.join(name).exists(), "{name} missing");
    }

    let fused = tmp.path().join("fused.png");
    let report = tmp.path().join("report.json");
    let keypoints = tmp.path().join("kp");
    let files: Vec<String> = (0..3).map(|i| path(&stack.join(format!("slice_{i:02}.png"))).to_string()).collect();
    let mut args = vec!["fuse"];
    args.extend(files.iter().map(String::as_str));
    args.extend([
        "--octaves", "3", "--out", path(&fused), "--report", path(&report), "--save-keypoints", path(&keypoints),
    ]);
    let out = focusfuse(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fused.exists());
    assert!(keypoints.join("slice_00_keypoints.csv").exists());

    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["config"]["octaves"], 3);
    assert_eq!(json["images"].as_array().unwrap().len(), 3);

    let quality = tmp.path().join("quality.json");
    let out = focusfuse(&[
        "eval", "--fused", path(&fused), "--truth", path(&stack.join("truth.png")), "--report", path(&report),
        "--out-json", path(&quality),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let q: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&quality).unwrap()).unwrap();
    let fused_rmse = q["fused_rmse"].as_f64().unwrap();
    let best_input = q["input_rmse"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .fold(f64::INFINITY, f64::min);
    assert!(fused_rmse < best_input, "{fused_rmse} vs {best_input}");
    for err in q["recovery_error"].as_array().unwrap() {
        assert!(err.as_f64().unwrap() <= 1.0);
    }
}

#[test]
fn sweep_writes_one_row_per_grid_point() {
    let tmp = tempfile::tempdir().unwrap();
    let stack = tmp.path().join("stack");
    synth(&stack, "200", "3");
    // the truth image and manifest live beside the slices; sweep an explicit list
    let files: Vec<String> = (0..3).map(|i| path(&stack.join(format!("slice_{i:02}.png"))).to_string()).collect();
    let csv = tmp.path().join("sweep.csv");
    let mut args = vec!["sweep"];
    args.extend(files.iter().map(String::as_str));
    args.extend(["--axis", "octaves=1,2", "--axis", "dim=16,36", "--out-csv", path(&csv)]);
    let out = focusfuse(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("octaves,layers,descriptor_dim,mean_accuracy"));
}

#[test]
fn input_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = focusfuse(&["fuse", path(&tmp.path().join("missing"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = focusfuse(&["fuse", path(tmp.path()), "--dim", "50"]);
    assert_eq!(out.status.code(), Some(2));

    let out = focusfuse(&["sweep", path(tmp.path()), "--axis", "gamma=1", "--out-csv", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unregistrable_image_exits_with_three_unless_skipped() {
    let tmp = tempfile::tempdir().unwrap();
    let stack = tmp.path().join("stack");
    synth(&stack, "200", "11");
    // a featureless slice gives the matcher nothing to work with
    let flat = image::GrayImage::from_pixel(200, 200, image::Luma([128u8]));
    flat.save(stack.join("slice_03.png")).unwrap();
    std::fs::remove_file(stack.join("truth.png")).unwrap();

    let fused = tmp.path().join("fused.png");
    let out = focusfuse(&["fuse", path(&stack), "--octaves", "3", "--reference", "0", "--out", path(&fused)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("slice_03.png"));

    let out = focusfuse(&[
        "fuse", path(&stack), "--octaves", "3", "--reference", "0", "--skip-unregistrable", "--out", path(&fused),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("dropped"));
}
