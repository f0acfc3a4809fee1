use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bmnn::dataio::{encode_idx, IdxTensor};

fn bmnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bmnn"))
        .args(args)
        .env_remove("BMNN_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn smoke(out: &Path) -> Output {
    bmnn(&[
        "teacher-student",
        "--arch",
        "5x5x1",
        "--trials",
        "1",
        "--samples",
        "100",
        "--test-samples",
        "50",
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn teacher_student_smoke_run_writes_well_formed_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = smoke(dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let train = read(dir.path(), "train_log.csv");
    let mut lines = train.lines();
    assert_eq!(lines.next(), Some("run_id,algorithm,trial,sample_index,window_error"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // One log point (sample 100) per algorithm.
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(r.len(), 5);
        assert_eq!(r[3], "100");
        let e: f64 = r[4].parse().unwrap();
        assert!((0.0..=1.0).contains(&e));
    }
    let test = read(dir.path(), "test_log.csv");
    assert!(test.starts_with("run_id,algorithm,trial,test_error\n"));
    assert_eq!(test.lines().count(), 5);
    assert!(!train.contains('\r') && !test.contains('\r'));
    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path(), "manifest.json")).unwrap();
    assert!(manifest["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    assert_eq!(manifest["config"]["samples"], 100);
    assert_eq!(manifest["eta"], 3e-2);
}

#[test]
fn same_config_gives_identical_bytes() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        assert!(smoke(d.path()).status.success());
    }
    for name in ["train_log.csv", "test_log.csv", "summary.csv", "manifest.json", "map-trial0.bmnn"] {
        assert_eq!(
            fs::read(dirs[0].path().join(name)).unwrap(),
            fs::read(dirs[1].path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [
        &["teacher-student", "--arch", "4x4x1"][..],
        &["teacher-student", "--arch", "11x11x1", "--algo", "backprop"][..],
        &["teacher-student"][..],
        &["teacher-student", "--arch", "3x3x1", "--algo", "sgd"][..],
        &["frobnicate"][..],
        &["mnist", "--data-dir", "/nonexistent/bmnn"][..],
    ] {
        assert_eq!(bmnn(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn quick_verify_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = bmnn(&["verify", "--quick", "--out", dir.path().to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.lines().all(|l| l.starts_with("PASS ")));
    let report = read(dir.path(), "verify_report.csv");
    assert!(report.starts_with("name,checked,failures,passed,detail\n"));
    assert!(read(dir.path(), "oracle.csv").starts_with("instance,exact,engine,agree\n"));
}

/// Writes a tiny IDX data set: 2x2 images whose brightest pixel encodes the label.
fn tiny_digits(dir: &Path) {
    for (prefix, n) in [("train", 300usize), ("t10k", 60)] {
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let data: Vec<u8> = labels
            .iter()
            .enumerate()
            .flat_map(|(i, &l)| (0..4u8).map(move |p| if p == l % 4 { 200 + (i % 50) as u8 } else { 10 * p }))
            .collect();
        let images = IdxTensor { dims: vec![n, 2, 2], data };
        let labels = IdxTensor { dims: vec![n], data: labels };
        fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), encode_idx(&images)).unwrap();
        fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), encode_idx(&labels)).unwrap();
    }
}

#[test]
fn mnist_run_then_eval_saved_models() {
    let data = tempfile::tempdir().unwrap();
    tiny_digits(data.path());
    let out = tempfile::tempdir().unwrap();
    let run = bmnn(&[
        "mnist",
        "--arch",
        "5x20x10",
        "--epochs",
        "2",
        "--data-dir",
        data.path().to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let epochs = read(out.path(), "epoch_log.csv");
    assert!(epochs.starts_with("run_id,algorithm,trial,epoch,test_error\n"));
    // 4 algorithms x epochs 0, 1, 2.
    assert_eq!(epochs.lines().count(), 13);
    for (model, algos) in [
        ("posterior-trial0.json", &["mfb", "pmfb"][..]),
        ("map-trial0.bmnn", &["mfb"][..]),
        ("backprop-trial0.json", &["backprop", "clipped"][..]),
    ] {
        let path = out.path().join(model);
        let eval = Command::new(env!("CARGO_BIN_EXE_bmnn"))
            .args(["eval", "--model", path.to_str().unwrap()])
            .env("BMNN_DATA_DIR", data.path())
            .output()
            .unwrap();
        assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
        let text = String::from_utf8(eval.stdout).unwrap();
        let got: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(got, algos, "{model}");
    }
    // The packed MAP network and the posterior's MAP readout agree.
    let final_mfb = |text: &str| {
        text.lines()
            .filter(|l| l.contains(",mfb,0,2,"))
            .map(|l| l.rsplit(',').next().unwrap().to_string())
            .next()
            .unwrap()
    };
    let packed = Command::new(env!("CARGO_BIN_EXE_bmnn"))
        .args(["eval", "--model", out.path().join("map-trial0.bmnn").to_str().unwrap()])
        .args(["--data-dir", data.path().to_str().unwrap()])
        .output()
        .unwrap();
    let packed = String::from_utf8(packed.stdout).unwrap();
    let packed_err: f64 = packed.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(packed_err, final_mfb(&epochs).parse::<f64>().unwrap());
}
