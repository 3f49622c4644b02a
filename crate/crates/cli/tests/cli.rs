use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use misogibbs::convergence::read_matrix;

fn misogibbs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_misogibbs"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_dataset(dir: &Path) -> std::path::PathBuf {
    let spec = dir.join("spec.json");
    fs::write(
        &spec,
        r#"{"m": 2, "n": 200, "p": 50, "inputs": {"kind": "white"}, "noise_factor": 0.2, "seed": 4}"#,
    )
    .unwrap();
    let data = dir.join("data");
    let out = misogibbs(&["generate", "--config", p(&spec), "--out", p(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    data
}

#[test]
fn generate_writes_dataset_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path());
    for f in ["data.csv", "problem.json", "truth.json", "collinearity.csv", "pair_probabilities.csv", "manifest.json"] {
        assert!(data.join(f).exists(), "missing {f}");
    }
    let header = fs::read_to_string(data.join("data.csv")).unwrap();
    assert!(header.starts_with("u1,u2,y"));
}

#[test]
fn bad_descriptor_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.json");
    fs::write(&spec, r#"{"m": 2, "n": 200, "p": 50, "inputs": {"kind": "white"}, "noise_factor": "loud", "seed": 1}"#).unwrap();
    let out = misogibbs(&["generate", "--config", p(&spec), "--out", p(&tmp.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("noise_factor"));

    fs::write(&spec, r#"{"m": 2, "n": 20, "p": 50, "inputs": {"kind": "white"}, "noise_factor": 0.2, "seed": 1}"#).unwrap();
    let out = misogibbs(&["generate", "--config", p(&spec), "--out", p(&tmp.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn identify_is_reproducible_and_validates_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path());
    let run = |dir: &str| {
        let out = misogibbs(&[
            "identify", "--data", p(&data), "--scheme", "rsgsob", "--n-ob", "2", "--n-mc", "60", "--seed", "3",
            "--out", p(&tmp.path().join(dir)),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run("a");
    run("b");
    for f in ["trace.csv", "selections.csv", "selection_freq.csv", "summary.json", "trace.bin"] {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = fs::read(tmp.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("a").join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["stored_samples"], 60);
    assert!(summary["fit"]["fit_all"].is_number());

    let bad = misogibbs(&["identify", "--data", p(&data), "--scheme", "gibbs", "--out", p(&tmp.path().join("c"))]);
    assert_eq!(bad.status.code(), Some(2));
    let half = misogibbs(&[
        "identify", "--data", p(&data), "--scheme", "gs", "--lambda", "1", "--out", p(&tmp.path().join("c")),
    ]);
    assert_eq!(half.status.code(), Some(2));
    let missing = misogibbs(&["identify", "--data", p(&tmp.path().join("nope")), "--scheme", "gs", "--out", p(&tmp.path().join("c"))]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path());
    let cfg = tmp.path().join("chain.json");
    fs::write(&cfg, r#"{"scheme": "GSd", "n_mc": 40, "seed": 1}"#).unwrap();
    let out_dir = tmp.path().join("run");
    let out = misogibbs(&["identify", "--data", p(&data), "--config", p(&cfg), "--n-mc", "30", "--out", p(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["scheme"], "GSd");
    assert_eq!(s["stored_samples"], 30);

    fs::write(&cfg, r#"{"scheme": "GSd", "iterations": 40}"#).unwrap();
    let out = misogibbs(&["identify", "--data", p(&data), "--config", p(&cfg), "--out", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("iterations"));
}

#[test]
fn parallel_chains_get_their_own_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path());
    let runs = tmp.path().join("runs");
    let out = misogibbs(&[
        "identify", "--data", p(&data), "--scheme", "RSGS", "--n-mc", "220", "--seed", "10", "--chains", "3",
        "--out", p(&runs),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for s in 10..13 {
        assert!(runs.join(format!("seed_{s}")).join("trace.bin").exists());
    }
    let a = fs::read(runs.join("seed_10").join("trace.csv")).unwrap();
    let b = fs::read(runs.join("seed_11").join("trace.csv")).unwrap();
    assert_ne!(a, b);

    let rep = misogibbs(&["report", "--run", p(&runs)]);
    assert!(rep.status.success(), "{}", String::from_utf8_lossy(&rep.stderr));
    let fits = fs::read_to_string(runs.join("fit_table.csv")).unwrap();
    assert!(fits.starts_with("scheme,seed,samples,fit_all"));
    assert_eq!(fits.lines().count(), 1 + 3 * 2);
    let rl = fs::read_to_string(runs.join("rl_table.csv")).unwrap();
    assert_eq!(rl.lines().count(), 1 + 3);
}

#[test]
fn report_without_runs_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = misogibbs(&["report", "--run", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rate_on_the_delta_toy() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("toy.json");
    fs::write(&spec, r#"{"m": 10, "n": 10, "p": 10, "inputs": {"kind": "delta"}, "noise_factor": 0.2, "seed": 1}"#).unwrap();
    let data = tmp.path().join("data");
    assert!(misogibbs(&["generate", "--config", p(&spec), "--out", p(&data)]).status.success());
    let out_dir = tmp.path().join("rate");
    let out = misogibbs(&[
        "rate", "--data", p(&data), "--lambda", "1", "--sigma2", "1", "--n-ob", "3", "--out", p(&out_dir), "--dump-matrix",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("convergence.json")).unwrap()).unwrap();
    let ob = rep["rate_rsgsob"].as_f64().unwrap();
    let rs = rep["rate_rsgs"].as_f64().unwrap();
    assert!((ob - 0.5861).abs() < 5e-4, "{ob}");
    assert!(ob < rs);
    assert_eq!(rep["hyperparameters"], "fixed-hyperparameter");
    let mix = read_matrix(fs::File::open(out_dir.join("mixture.cmix")).unwrap()).unwrap();
    assert_eq!(mix.shape(), (100, 100));

    let nothing = misogibbs(&["rate", "--data", p(&data), "--out", p(&out_dir)]);
    assert_eq!(nothing.status.code(), Some(2));
}
