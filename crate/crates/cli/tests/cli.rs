use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_csileak"))
}

fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = run(&["scan", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_is_byte_deterministic() {
    let cfg = demo_dir().join("demo.toml");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = run(&["simulate", "--config", s(&cfg), "--out", s(d.path())]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["band0.iq", "band1.iq"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name} differs between runs");
    }
}

#[test]
fn pipeline_demo_succeeds() {
    let out_dir = tempfile::tempdir().unwrap();
    let cfg = demo_dir().join("demo.toml");
    let out = run(&["pipeline", "--config", s(&cfg), "--out", s(out_dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["ssim_print"].as_f64().unwrap() >= 0.8);
    assert!(v["ssim_vein"].as_f64().unwrap() >= 0.8);
    for f in ["manifest.json", "scan.json", "print_restored.pgm", "vein_restored.pgm"] {
        assert!(out_dir.path().join(f).exists(), "missing {f}");
    }
}

#[test]
fn reconstruct_and_demux_from_iq() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_dir().join("demo.toml");
    assert!(run(&["simulate", "--config", s(&cfg), "--out", s(dir.path())]).status.success());
    let iq = dir.path().join("band0.iq");
    let recon = dir.path().join("recon.pgm");
    let out = run(&[
        "reconstruct", "--iq", s(&iq), "--width", "64", "--height", "64", "--frames", "4", "--out", s(&recon),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let img = csileak::image::read_pgm(&recon).unwrap();
    assert_eq!(img.dims(), (64, 64));

    let prefix = dir.path().join("d");
    let out = run(&[
        "demux", "--iq", s(&iq), "--width", "64", "--height", "64", "--frames", "4", "--parity", "auto", "--out",
        s(&prefix),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("d_print.pgm").exists());
    assert!(dir.path().join("d_vein.pgm").exists());
}

#[test]
fn metrics_of_identical_images() {
    let p = demo_dir().join("print.pgm");
    let out = run(&["metrics", s(&p), s(&p)]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["ssim"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(v["psnr_db"].is_null());
}

#[test]
fn runtime_failure_exits_one_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["restore", s(&dir.path().join("missing.pgm")), "--out", s(&dir.path().join("x.pgm"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
