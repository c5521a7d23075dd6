use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use g2g::metrics::EvalReport;
use g2g::noise::NoiseKind;
use g2g_cli::Manifest;

fn g2g(work: &Path, args: &[&str]) -> Output {
    let cfg = work.with_extension("json");
    fs::write(&cfg, r#"{"data": {"train_images": 3, "test_images": 1, "height": 24, "width": 24}}"#).unwrap();
    Command::new(env!("CARGO_BIN_EXE_g2g"))
        .args(["--preset", "desk", "--config"])
        .arg(&cfg)
        .arg("--work")
        .arg(work)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn manifest(work: &Path) -> Manifest {
    serde_json::from_str(&fs::read_to_string(work.join("manifest.json")).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn synthesize_records_the_noise_spec() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("w");
    let o = g2g(&work, &["synthesize", "--noise", "gauss:25"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = manifest(&work);
    assert_eq!(m.noise, NoiseKind::Gaussian { sigma_255: 25.0 });
    assert_eq!((m.train.len(), m.test.len()), (3, 1));
    assert_eq!(fs::read_dir(work.join("noisy")).unwrap().count(), 4);
}

#[test]
fn correlated_spec_defaults_eta() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("w");
    assert!(g2g(&work, &["synthesize", "--noise", "corr:25:k=16"]).status.success());
    match manifest(&work).noise {
        NoiseKind::Correlated { sigma_255, k, eta } => {
            assert_eq!((sigma_255, k), (25.0, 16));
            assert_eq!(eta, std::f64::consts::FRAC_1_SQRT_2);
        }
        other => panic!("unexpected noise {other:?}"),
    }
    let text = fs::read_to_string(work.join("manifest.json")).unwrap();
    assert!(text.contains("\"eta\": 0.7071067811865476"), "{text}");
}

#[test]
fn synthesize_is_reproducible_and_skips_when_current() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(g2g(&a, &["synthesize"]).status.success());
    assert!(g2g(&b, &["synthesize"]).status.success());
    for e in fs::read_dir(a.join("noisy")).unwrap() {
        let e = e.unwrap();
        assert_eq!(fs::read(e.path()).unwrap(), fs::read(b.join("noisy").join(e.file_name())).unwrap());
    }
    let again = g2g(&a, &["synthesize"]);
    assert!(again.status.success());
    assert!(stderr(&again).contains("up to date"), "{}", stderr(&again));
    let forced = g2g(&a, &["--force", "synthesize"]);
    assert!(!stderr(&forced).contains("up to date"));
}

#[test]
fn changed_seed_invalidates_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("w");
    assert!(g2g(&work, &["synthesize"]).status.success());
    let o = g2g(&work, &["--seed", "9", "extract"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("rerun `g2g synthesize`"), "{}", stderr(&o));
}

#[test]
fn missing_stage_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("w");
    let o = g2g(&work, &["extract"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("run `g2g synthesize` first"), "{}", stderr(&o));
    assert!(g2g(&work, &["synthesize"]).status.success());
    let o = g2g(&work, &["train-wgan"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("run `g2g extract` first"), "{}", stderr(&o));
}

#[test]
fn bad_noise_spec_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = g2g(&dir.path().join("w"), &["synthesize", "--noise", "pink:3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gauss"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(g2g(&dir.path().join("w"), &["synthesize", "--sigma", "3"]).status.code(), Some(2));
}

#[test]
fn evaluate_identical_directories() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("w");
    assert!(g2g(&work, &["synthesize"]).status.success());
    let clean = work.join("clean");
    let o = g2g(&work, &["evaluate", "--clean", clean.to_str().unwrap(), "--denoised", clean.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("inf"));
    let r: EvalReport = serde_json::from_str(&fs::read_to_string(work.join("report.json")).unwrap()).unwrap();
    assert_eq!(r.per_image.len(), 4);
    assert!(r.aggregate.psnr_db.is_infinite());
    assert!((r.aggregate.ssim - 1.0).abs() < 1e-12);
}

#[test]
fn print_config_reflects_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let o = g2g(&dir.path().join("w"), &["--seed", "42", "--print-config", "run"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["seed"], 42);
    assert_eq!(v["data"]["train_images"], 3);
}
