use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cfmimo::sim::binio::read_channels;
use cfmimo::sim::SystemConfig;
use cfmimo::train::{Policy, PolicyCheckpoint, TrainConfig};

fn cfmimo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfmimo")).args(args).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn small_system() -> SystemConfig {
    SystemConfig { k: 4, n_t: 2, ..SystemConfig::desk() }
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) {
    fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

#[test]
fn simulate_writes_binary_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    write_json(&cfg, &small_system());
    let bin = dir.path().join("channels.bin");
    ok(&cfmimo(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "3", "--out", bin.to_str().unwrap()]));
    let bytes = fs::read(&bin).unwrap();
    assert_eq!(&bytes[..4], b"CFMM");
    let ch = read_channels(bytes.as_slice()).unwrap();
    assert_eq!((ch.m(), ch.k(), ch.n(), ch.n_t()), (3, 4, 2, 2));
}

#[test]
fn baseline_writes_result_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    write_json(&cfg, &small_system());
    for algo in ["dsatur-tabu-wmmse", "oracle"] {
        let out = dir.path().join(format!("{algo}.json"));
        ok(&cfmimo(&["baseline", "--config", cfg.to_str().unwrap(), "--algo", algo, "--out", out.to_str().unwrap()]));
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(v["X"].as_array().unwrap().len(), 4);
        assert_eq!(v["P"].as_array().unwrap().len(), 2);
        assert_eq!(v["eta_per_subframe"].as_array().unwrap().len(), 2);
        assert!(v["eta_avg"].as_f64().unwrap() > 0.0);
        assert!(v["tau_p"].as_f64().unwrap() >= 1.0);
    }
}

#[test]
fn train_then_sweep_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut tc = TrainConfig::new(small_system());
    tc.n_train = 4;
    tc.n_test = 3;
    tc.batch_size = 2;
    let cfg = dir.path().join("train.json");
    write_json(&cfg, &tc);
    let ck = dir.path().join("dts.json");
    let curve = dir.path().join("curve.csv");
    ok(&cfmimo(&[
        "train", "--variant", "dts", "--config", cfg.to_str().unwrap(), "--train-seed", "5", "--epochs", "2",
        "--out", ck.to_str().unwrap(), "--curve", curve.to_str().unwrap(),
    ]));
    let parsed: PolicyCheckpoint = serde_json::from_str(&fs::read_to_string(&ck).unwrap()).unwrap();
    assert!(matches!(Policy::<f64>::from_checkpoint(&parsed).unwrap(), Policy::Dts { .. }));
    assert_eq!(fs::read_to_string(&curve).unwrap().lines().count(), 1 + 2 * 2);

    let spec = serde_json::json!({
        "train": tc,
        "methods": ["dts_agnn", "equal_power_random_pilots"],
        "sweep": {"variable": "tau_c", "values": [50, 200]},
        "test_seed": 11,
        "checkpoints": {"dts_agnn": "dts.json"},
        "train_missing": false
    });
    let spec_path = dir.path().join("spec.json");
    write_json(&spec_path, &spec);
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        ok(&cfmimo(&["eval", "sweep", "--spec", spec_path.to_str().unwrap(), "--out", out.to_str().unwrap()]));
        csvs.push(fs::read(out.join("results.csv")).unwrap());
        assert!(out.join("timing.csv").exists());
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs.remove(0)).unwrap();
    assert!(text.starts_with("# schema=1\n"));
    assert_eq!(text.lines().count(), 2 + 4);
}

#[test]
fn sweep_without_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let spec = serde_json::json!({
        "train": TrainConfig::new(small_system()),
        "methods": ["sts_agnn"],
        "sweep": {"variable": "K", "values": [4]},
        "test_seed": 1,
        "train_missing": false
    });
    let spec_path = dir.path().join("spec.json");
    write_json(&spec_path, &spec);
    let out = cfmimo(&["eval", "sweep", "--spec", spec_path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing checkpoint"));
}

#[test]
fn properties_exit_code_matches_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = cfmimo(&["eval", "properties", "--out", dir.path().to_str().unwrap()]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("properties.json")).unwrap()).unwrap();
    let checks = report["checks"].as_array().unwrap();
    assert!(checks.len() >= 10);
    let all = checks.iter().all(|c| c["passed"].as_bool().unwrap());
    assert_eq!(out.status.success(), all);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).count(), checks.len());
    for name in ["equivariance sts", "relaxation consistency", "tabu vs oracle", "nmse closed form"] {
        let c = checks.iter().find(|c| c["name"] == name).unwrap();
        assert!(c["passed"].as_bool().unwrap(), "{c}");
    }
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, "{\"M\": 0}").unwrap();
    let out = cfmimo(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("x.bin").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
