//! End-to-end checks of the `sfc` binary: the simulate/run/summarize
//! pipeline, reproducibility guarantees, and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sfc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfc")).args(args).output().expect("binary runs")
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn simulate_into(dir: &Path, seed: u64) {
    let out = sfc(&[
        "simulate",
        "--preset",
        "smoke_small",
        "--seed",
        &seed.to_string(),
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn write_config(dir: &Path, data: &Path, out_dir: &Path, workers: (usize, usize)) -> PathBuf {
    let text = format!(
        r#"
[data]
path = "{data}"
rows = 6
cols = 6

[sampler]
chains = 2
seed = 11
iterations = 200
burn_in = 80
thin = 4
pilot_chains = 3
pilot_iterations = 40

[parallel]
chain_workers = {cw}
cluster_workers = {uw}

[output]
dir = "{out}"
"#,
        data = data.display(),
        out = out_dir.display(),
        cw = workers.0,
        uw = workers.1,
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

const CHAIN_FILES: [&str; 6] = [
    "chain_0.log.ndjson",
    "chain_0.samples.ndjson",
    "chain_0.beta.bin",
    "chain_1.log.ndjson",
    "chain_1.samples.ndjson",
    "chain_1.beta.bin",
];

const SUMMARY_FILES: [&str; 5] =
    ["labels.csv", "uncertainty.csv", "curves.csv", "beta.csv", "map.json"];

#[test]
fn simulate_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    simulate_into(&a, 7);
    simulate_into(&b, 7);
    simulate_into(&c, 8);
    for file in ["dataset.csv", "dataset.bin", "truth_labels.csv", "simulation.json"] {
        assert_eq!(read(&a.join(file)), read(&b.join(file)), "{file} differs across reruns");
    }
    assert_ne!(read(&a.join("dataset.csv")), read(&c.join("dataset.csv")));
}

#[test]
fn unknown_preset_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = sfc(&[
        "simulate",
        "--preset",
        "no_such_scenario",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("smoke_small"), "error should list presets: {msg}");
}

#[test]
fn run_then_summarize_reproduces_the_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    simulate_into(&data_dir, 7);
    let out_dir = dir.path().join("run");
    let config = write_config(
        dir.path(),
        &data_dir.join("dataset.csv"),
        &out_dir,
        (1, 1),
    );
    let out = sfc(&["run", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in CHAIN_FILES.iter().chain(&SUMMARY_FILES).chain(&["manifest.json"]) {
        assert!(out_dir.join(file).exists(), "{file} missing");
    }
    let manifest = std::fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"status\": \"ok\""), "{manifest}");

    let re_dir = dir.path().join("re");
    let out = sfc(&[
        "summarize",
        "--run-dir",
        out_dir.to_str().unwrap(),
        "--out-dir",
        re_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in SUMMARY_FILES {
        assert_eq!(read(&out_dir.join(file)), read(&re_dir.join(file)), "{file} differs");
    }
}

#[test]
fn worker_counts_leave_artifacts_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    simulate_into(&data_dir, 7);
    let data = data_dir.join("dataset.bin");

    let serial_dir = dir.path().join("serial");
    let serial_cfg = write_config(&dir.path().join("."), &data, &serial_dir, (1, 1));
    std::fs::rename(&serial_cfg, dir.path().join("serial.toml")).unwrap();
    let out = sfc(&["run", "--config", dir.path().join("serial.toml").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let wide_dir = dir.path().join("wide");
    write_config(dir.path(), &data, &wide_dir, (2, 4));
    let out = sfc(&["run", "--config", dir.path().join("run.toml").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    for file in CHAIN_FILES.iter().chain(&SUMMARY_FILES) {
        assert_eq!(
            read(&serial_dir.join(file)),
            read(&wide_dir.join(file)),
            "{file} depends on worker counts"
        );
    }
}

#[test]
fn config_and_data_problems_use_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad_toml = dir.path().join("bad.toml");
    std::fs::write(&bad_toml, "[data\nrows = ").unwrap();
    let out = sfc(&["run", "--config", bad_toml.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let missing_cfg = dir.path().join("missing.toml");
    let out = sfc(&["run", "--config", missing_cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out_dir = dir.path().join("out");
    let config = write_config(dir.path(), &dir.path().join("absent.csv"), &out_dir, (1, 1));
    let out = sfc(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    // A dataset whose size contradicts the configured lattice.
    let data_dir = dir.path().join("data");
    simulate_into(&data_dir, 7);
    let small = dir.path().join("small.toml");
    let text = std::fs::read_to_string(&config).unwrap().replace(
        &dir.path().join("absent.csv").display().to_string(),
        &data_dir.join("dataset.csv").display().to_string(),
    );
    std::fs::write(&small, text.replace("rows = 6", "rows = 5")).unwrap();
    let out = sfc(&["run", "--config", small.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn self_checks_pass() {
    let out = sfc(&["check"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("ok  ")).count(), 5, "{text}");
}
