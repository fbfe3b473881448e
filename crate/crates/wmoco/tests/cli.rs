use std::path::{Path, PathBuf};
use std::process::Command;

use wmoco::io::load_volume;

fn wmoco(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_wmoco")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = wmoco(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two 16^3 phantom pairs in `dir`.
fn phantoms(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&["phantom", "--out-dir", s(&data), "--count", "2", "--size", "16"]);
    data
}

const SMALL: [&str; 10] = ["--width", "4", "--train-steps", "12", "--batch", "2", "--diffusion-steps", "10", "--seed", "3"];

#[test]
fn simulate_zero_severity_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = phantoms(dir.path());
    let clean = data.join("0.clean.vol");
    let same = dir.path().join("same.vol");
    ok(&["simulate", "--input", s(&clean), "--out", s(&same), "--mmin", "0", "--mmax", "0"]);
    assert_eq!(std::fs::read(&same).unwrap(), std::fs::read(&clean).unwrap());

    let (a, b) = (dir.path().join("a.vol"), dir.path().join("b.vol"));
    for out in [&a, &b] {
        ok(&["simulate", "--input", s(&clean), "--out", s(out), "--preset", "mild", "--seed", "4"]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("a.vol.report.json")).unwrap()).unwrap();
    let f = report["fraction"].as_f64().unwrap();
    assert!((0.30..=0.45).contains(&f), "{f}");
}

#[test]
fn train_restore_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = phantoms(dir.path());
    let (xy, xz) = (dir.path().join("xy.ckpt"), dir.path().join("xz.ckpt"));
    for (plane, out) in [("xy", &xy), ("xz", &xz)] {
        let mut args = vec!["train", "--data", s(&data), "--plane", plane, "--out", s(out)];
        args.extend(SMALL);
        ok(&args);
    }
    let csv = std::fs::read_to_string(dir.path().join("xy.ckpt.loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert_eq!(csv.lines().next(), Some("step,loss"));
    let (mx, _) = wmoco::checkpoint::load(&xy).unwrap();
    let (mz, _) = wmoco::checkpoint::load(&xz).unwrap();
    assert_eq!((mx.plane.as_str(), mz.plane.as_str()), ("xy", "xz"));

    let input = data.join("1.corrupt.vol");
    let restored: Vec<PathBuf> = (0..2).map(|k| dir.path().join(format!("r{k}.vol"))).collect();
    for out in &restored {
        let mut args = vec!["restore", "--input", s(&input), "--xy", s(&xy), "--xz", s(&xz), "--out", s(out)];
        args.extend(SMALL);
        ok(&args);
    }
    assert_eq!(std::fs::read(&restored[0]).unwrap(), std::fs::read(&restored[1]).unwrap());
    let timing: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("r0.vol.timing.json")).unwrap()).unwrap();
    assert_eq!(timing["steps"], 10);

    // the 2D ablation only needs the XY network; swapping planes is refused
    let mut args = vec!["restore", "--input", s(&input), "--xy", s(&xy), "--mode", "2d", "--out", s(&restored[1])];
    args.extend(SMALL);
    ok(&args);
    let mut args = vec!["restore", "--input", s(&input), "--xy", s(&xz), "--xz", s(&xy), "--out", s(&restored[1])];
    args.extend(SMALL);
    assert_eq!(wmoco(&args).status.code(), Some(2));

    let ev = dir.path().join("eval.csv");
    ok(&["eval", "--pred", s(&input), "--reference", s(&input), "--out", s(&ev)]);
    let text = std::fs::read_to_string(&ev).unwrap();
    assert!(text.lines().any(|l| l.ends_with(",xy,psnr,inf")), "{text}");
    assert!(text.lines().any(|l| l.ends_with(",xz,ssim,1")), "{text}");
}

#[test]
fn oracle_restore_recovers_clean() {
    let dir = tempfile::tempdir().unwrap();
    let data = phantoms(dir.path());
    let (clean, input) = (data.join("0.clean.vol"), data.join("0.corrupt.vol"));
    let store = dir.path().join("noise.bin");
    let out = dir.path().join("o.vol");
    ok(&["record-noise", "--input", s(&input), "--clean", s(&clean), "--out", s(&store), "--seed", "5"]);
    ok(&["restore", "--input", s(&input), "--oracle", s(&store), "--out", s(&out), "--seed", "5"]);
    let err = load_volume(&out).unwrap().max_abs_diff(&load_volume(&clean).unwrap());
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn bench_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    ok(&["bench", "--sizes", "16", "--steps", "3", "--width", "4", "--out", s(&out)]);
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("slice_size,mode,steps,mean_ms,std_ms"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("16,wavelet,3,") && rows[1].starts_with("16,image,3,"));
}

#[test]
fn bad_input_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.vol");
    let out = dir.path().join("x.vol");
    assert_eq!(wmoco(&["simulate", "--input", s(&missing), "--out", s(&out)]).status.code(), Some(3));
    let data = phantoms(dir.path());
    let clean = data.join("0.clean.vol");
    let bad = wmoco(&["simulate", "--input", s(&clean), "--out", s(&out), "--mmin", "0.5", "--mmax", "0.2"]);
    assert_eq!(bad.status.code(), Some(2));
}
