use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn calovae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_calovae"))
        .args(args)
        .output()
        .expect("calovae binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn gen_data(dir: &Path, events: &str, seed: &str) {
    let o = calovae(&["gen-data", "--out", path(dir), "--events", events, "--seed", seed]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = calovae(&["gen-data", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error code=CONFIG exit=2 msg="), "{err}");
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());
    assert_eq!(calovae(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(calovae(&["gen-data"]).status.code(), Some(2));
    let o = calovae(&["gen-data", "--out", out, "--seed", "1", "--set", "model.bogus=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("code=CONFIG"));
    let o = calovae(&["gen-data", "--out", out, "--seed", "1", "--set", "model.groups=5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(calovae(&["--help"]).status.success());
}

#[test]
fn missing_and_malformed_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cshw");
    fs::write(&bad, b"not a dataset").unwrap();
    let out = dir.path().join("out");
    let o = calovae(&["preprocess", "--data", path(&bad), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("code=FORMAT"), "{}", stderr(&o));
    let o = calovae(&["preprocess", "--data", path(&dir.path().join("absent")), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn device_sampling_without_calibration_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_data(&d.join("data"), "40", "1");
    let small = ["--set", "model.anneal_epochs=1", "--set", "model.joint_epochs=0", "--set", "model.loglik_every=0"];
    let mut args = vec!["train", "--data", "", "--out", "", "--epochs", "1", "--seed", "2"];
    let data = d.join("data/dataset.cshw");
    let model = d.join("m");
    args[2] = path(&data);
    args[4] = path(&model);
    args.extend(small);
    let o = calovae(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = calovae(&[
        "sample", "--model", path(&model.join("model")), "--out", path(&d.join("s")), "--seed", "3", "--sampler", "device",
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("code=CALIBRATION_MISSING"));
}

#[test]
fn invalid_topology_check_reports_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("bad.txt");
    fs::write(&edges, "0 1\n1 2\n# partition\n0 0\n1 1\n2 1\n").unwrap();
    let out = dir.path().join("check");
    let o = calovae(&["topology", "check", "--input", path(&edges), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let report = json(&out.join("topology_report.json"));
    assert_eq!(report["valid"], Value::Bool(false));
    assert!(out.join("manifest.txt").exists());
}

#[test]
fn topology_round_trips_through_import() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = calovae(&["topology", "gen", "--out", path(&d.join("g")), "--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let file = d.join("g/topology.txt");
    let o = calovae(&["topology", "import", "--input", path(&file), "--out", path(&d.join("i")), "--partition-supplied"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(&file).unwrap(), fs::read(d.join("i/topology.txt")).unwrap());
    let report = json(&d.join("g/topology_report.json"));
    assert_eq!(report["partition_sizes"], serde_json::json!([4, 16, 16, 16]));
}

#[test]
fn evaluating_a_file_against_itself_gives_zero_distance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_data(&d.join("data"), "300", "4");
    let data = d.join("data/dataset.cshw");
    let o = calovae(&["evaluate", "--reference", path(&data), "--candidate", path(&data), "--out", path(&d.join("e")), "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = json(&d.join("e/metrics.json"));
    assert!(m["fpd"].as_f64().unwrap().abs() < 1e-8);
    assert_eq!(m["sparsity_tv"].as_f64().unwrap(), 0.0);
    let p = json(&d.join("e/profiles.json"));
    assert_eq!(p["reference"], p["candidate"]);
}

#[test]
fn calibrate_recovers_device_temperature() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cal");
    let o = calovae(&["calibrate", "--out", path(&out), "--seed", "11", "--beta-star", "0.37"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let b = json(&out.join("beta_hat.json"));
    let beta_hat = b["beta_hat"].as_f64().unwrap();
    assert!((beta_hat / 0.37 - 1.0).abs() < 0.05, "{beta_hat}");
    assert_eq!(b["converged"], Value::Bool(true));
    let table = fs::read_to_string(out.join("calibration.tsv")).unwrap();
    assert!(table.lines().count() >= 2);
    assert!(out.join("energy_hist.json").exists());
}

#[test]
fn preprocess_writes_header_and_values() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_data(&d.join("data"), "20", "8");
    let o = calovae(&["preprocess", "--data", path(&d.join("data/dataset.cshw")), "--out", path(&d.join("p"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = fs::read(d.join("p/preprocessed.bin")).unwrap();
    assert_eq!(&bytes[..8], b"CALOPRE\0");
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header: Value = serde_json::from_slice(&bytes[12..12 + len]).unwrap();
    let (n, v, k) = (
        header["events"].as_u64().unwrap() as usize,
        header["voxels"].as_u64().unwrap() as usize,
        header["k_bits"].as_u64().unwrap() as usize,
    );
    assert_eq!((n, v, k), (20, 384, 4));
    assert_eq!(bytes.len(), 12 + len + 4 * n * v + n * k);
    let summary = json(&d.join("p/preprocess_summary.json"));
    let counts: u64 = summary["condition_counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(counts, 20);
}

#[test]
fn manifests_record_inputs_and_exclude_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_data(&d.join("data"), "40", "1");
    let data = d.join("data/dataset.cshw");
    let run = |out: &str| {
        let o = calovae(&[
            "train", "--data", path(&data), "--out", path(&d.join(out)), "--epochs", "2", "--seed", "9",
            "--set", "model.anneal_epochs=1", "--set", "model.joint_epochs=1", "--set", "model.loglik_every=0",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read_to_string(d.join(out).join("manifest.txt")).unwrap()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    assert!(a.contains("input\tdataset.cshw\t"));
    assert!(a.contains("artifact\tmodel/rbm.bin\t"));
    assert!(a.contains("train_log.tsv (wall_s excluded)"));
    let log = fs::read_to_string(d.join("a/train_log.tsv")).unwrap();
    assert!(log.lines().next().unwrap().ends_with("wall_s"));
}

#[test]
fn config_file_and_flags_compose() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.json");
    fs::write(&cfg, r#"{"seed": 3, "data": {"events": 7}}"#).unwrap();
    let o = calovae(&["gen-data", "--config", path(&cfg), "--out", path(&d.join("a"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = calovae(&["gen-data", "--config", path(&cfg), "--out", path(&d.join("b")), "--events", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let size = |p: &str| fs::metadata(d.join(p).join("dataset.cshw")).unwrap().len();
    // 384 voxels plus one incident energy per event, four bytes each.
    assert_eq!(size("b") - size("a"), 2 * 385 * 4);
}
