use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gctm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gctm"))
        .args(args)
        .output()
        .expect("spawn gctm")
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("tiny.cfg");
    fs::write(
        &path,
        "seed = 3\ntotal_iters = 40\nbatch_size = 16\nhidden = 8,8\neval_every = 20\neval_samples = 64\ncheckpoint_every = 20\n",
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn verify_passes() {
    let out = gctm(&["verify"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 8);
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(gctm(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(
        gctm(&["train", "--set", "bogus=1", "--out", "x"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(gctm(&["--help"]).status.code(), Some(0));
}

#[test]
fn training_is_reproducible_and_sampling_reads_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = gctm(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(b.join("metrics.csv")).unwrap());
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("iter,gctm_loss,fm_loss,total,N,metric_name,metric_value\n"));
    assert_eq!(
        fs::read(a.join("model.ckpt")).unwrap(),
        fs::read(b.join("model.ckpt")).unwrap()
    );
    assert!(a.join("ckpt_0000020.ckpt").exists());
    let manifest = fs::read_to_string(a.join("manifest.cfg")).unwrap();
    assert!(manifest.contains("seed = 3"));

    let s = dir.path().join("s");
    let ckpt = a.join("model.ckpt");
    let o = gctm(&[
        "sample",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--nfe",
        "2",
        "--count",
        "50",
        "--out",
        s.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(s.join("samples.txt")).unwrap();
    assert_eq!(text.lines().filter(|l| !l.trim().is_empty()).count(), 50);
    assert!(fs::read(s.join("samples.ppm")).unwrap().starts_with(b"P6"));
}

#[test]
fn missing_checkpoint_is_a_fault() {
    let dir = tempfile::tempdir().unwrap();
    let o = gctm(&[
        "sample",
        "--checkpoint",
        "/nonexistent/model.ckpt",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}
