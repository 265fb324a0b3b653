use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use oodbound::datasets::LabeledDataset;
use oodbound::models::{fit_ridge, ModelRecord};
use tempfile::TempDir;

fn oodbound(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oodbound")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&oodbound(&["frobnicate"])), 2);
    assert_eq!(code(&oodbound(&[])), 2);
    assert_eq!(code(&oodbound(&["run"])), 2);
    assert_eq!(code(&oodbound(&["run", "no-such-experiment"])), 2);
    assert_eq!(code(&oodbound(&["--help"])), 0);
}

#[test]
fn bad_configs_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let out = path(tmp.path(), "o");
    assert_eq!(code(&oodbound(&["run", "ridge-shift", "--config", "/nonexistent/cfg.json", "--out", &out])), 2);

    let unknown = tmp.path().join("unknown.json");
    fs::write(&unknown, r#"{"experiment": "ridge-shift", "grid": {"betaz": [1.0]}}"#).unwrap();
    assert_eq!(code(&oodbound(&["run", "ridge-shift", "--config", unknown.to_str().unwrap(), "--out", &out])), 2);

    let wrong = tmp.path().join("wrong.json");
    fs::write(&wrong, r#"{"experiment": "diag-trajectory"}"#).unwrap();
    assert_eq!(code(&oodbound(&["run", "ridge-shift", "--config", wrong.to_str().unwrap(), "--out", &out])), 2);

    let delta = tmp.path().join("delta.json");
    fs::write(&delta, r#"{"method": "zhao", "source_risk": 0.1, "proxy_dist": 0.2, "d_prime": 101, "n": 500, "delta": 1.5}"#).unwrap();
    assert_eq!(code(&oodbound(&["bound", "--config", delta.to_str().unwrap(), "--out", &out])), 2);
}

#[test]
fn runtime_errors_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    let model = tmp.path().join("model.json");
    let rec = ModelRecord::Ridge { beta: 0.1, n_train: 4, theta_hat: vec![1.0, 2.0, 3.0] };
    fs::write(&model, serde_json::to_string(&rec).unwrap()).unwrap();
    let gen = oodbound(&["gen", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&gen), 0);
    let out =
        oodbound(&["sharpness", "--model", model.to_str().unwrap(), "--data", &path(tmp.path(), "dataset.csv"), "--out", &path(tmp.path(), "s")]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_ridge_shift_default_writes_csv_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("ridge");
    let out = oodbound(&["run", "ridge-shift", "--config", "default", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("manifest command=run ridge-shift config_sha256="), "{stdout}");
    assert!(stdout.contains("seeds=0,1,2,3,4,5,6,7,8,9"));

    let csv = fs::read_to_string(dir.join("ridge-shift.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "beta,alpha,test_loss,kappa,seed");
    assert!(!csv.contains('\r'));
    assert_eq!(csv.lines().count(), 1 + 10 * 4 * 25);

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "run ridge-shift");
    assert_eq!(manifest["outputs"][0], "ridge-shift.csv");
    assert_eq!(manifest["config"]["experiment"], "ridge-shift");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        assert_eq!(code(&oodbound(&["run", "diag-trajectory", "--out", dir.to_str().unwrap()])), 0);
    }
    assert_eq!(fs::read(a.join("diag-trajectory.csv")).unwrap(), fs::read(b.join("diag-trajectory.csv")).unwrap());
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
}

#[test]
fn seed_flag_overrides_the_config() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&oodbound(&["gen", "--out", a.to_str().unwrap()])), 0);
    let out = oodbound(&["gen", "--seed", "3", "--out", b.to_str().unwrap()]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("seeds=3"));
    assert_ne!(fs::read(a.join("dataset.csv")).unwrap(), fs::read(b.join("dataset.csv")).unwrap());
}

#[test]
fn gen_partition_sharpness_bound_compare_pipeline() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    let cfg = root.join("gen.json");
    fs::write(&cfg, r#"{"kind": "linear_regression", "n": 30, "d": 4, "seed": 7}"#).unwrap();
    assert_eq!(code(&oodbound(&["gen", "--config", cfg.to_str().unwrap(), "--out", &path(root, "data")])), 0);
    let data_csv = root.join("data/dataset.csv");
    let data = LabeledDataset::read_csv(fs::File::open(&data_csv).unwrap()).unwrap();
    assert_eq!((data.len(), data.dim()), (30, 4));

    let out = oodbound(&["partition", "--data", data_csv.to_str().unwrap(), "--out", &path(root, "part")]);
    assert_eq!(code(&out), 0);
    let counts = fs::read_to_string(root.join("part/cell_counts.csv")).unwrap();
    assert_eq!(counts.lines().next().unwrap(), "cell_id,count");
    let total: usize = counts.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 30);
    assert!(root.join("part/partition.json").exists());

    let model = fit_ridge(data.features(), data.labels(), 0.5).unwrap();
    let model_path = root.join("ridge.json");
    fs::write(&model_path, serde_json::to_string(&ModelRecord::from(&model)).unwrap()).unwrap();
    let out = oodbound(&["sharpness", "--model", model_path.to_str().unwrap(), "--data", data_csv.to_str().unwrap(), "--out", &path(root, "sharp")]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("sharp/sharpness.json")).unwrap()).unwrap();
    assert!(report["kappa"].as_f64().unwrap() > 0.0);

    let mut bound_files = Vec::new();
    for (name, body) in [
        ("robust", r#"{"method": "robust", "source_risk": 0.1, "M": 1.0, "dtv": 0.05, "epsilon": 0.2, "K": 1000, "n": 500, "delta": 0.05}"#),
        ("zhao", r#"{"method": "zhao", "source_risk": 0.1, "proxy_dist": 0.2, "d_prime": 101, "n": 500, "delta": 0.05}"#),
    ] {
        let cfg = root.join(format!("{name}.json"));
        fs::write(&cfg, body).unwrap();
        assert_eq!(code(&oodbound(&["bound", "--config", cfg.to_str().unwrap(), "--out", &path(root, name)])), 0);
        bound_files.push(root.join(name).join("bound.csv").display().to_string());
    }
    let robust = fs::read_to_string(&bound_files[0]).unwrap();
    assert_eq!(robust.lines().next().unwrap(), "method,source_risk,distance,robustness,concentration,total,M,K,n,delta,extra_json");
    let total: f64 = robust.lines().nth(1).unwrap().split(',').nth(5).unwrap().parse().unwrap();
    assert!((total - (0.1 + 0.05 + 0.4 + 5.008602415894691)).abs() < 1e-12);

    let mut args = vec!["compare", "--out", root.to_str().unwrap(), "--input"];
    args.extend(bound_files.iter().map(String::as_str));
    assert_eq!(code(&oodbound(&args)), 0);
    let cmp = fs::read_to_string(root.join("compare.csv")).unwrap();
    let lines: Vec<&str> = cmp.lines().collect();
    assert_eq!(lines[0], "method,count,mean_total,min_total,max_total,tightest_count");
    assert_eq!(lines.len(), 3);
}
