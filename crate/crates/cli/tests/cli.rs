use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use vsfa_core::linear_vsfa::LinearVsfaParams;
use vsfa_core::model::Model;
use vsfa_core::series::TimeSeries;

fn vsfa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vsfa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = vsfa(args);
    assert!(
        out.status.success(),
        "vsfa {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn generate(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["generate", "--out", p(dir)];
    args.extend_from_slice(extra);
    ok(&args);
    dir.to_path_buf()
}

fn slow_linear_data(dir: &Path, t: &str) -> PathBuf {
    generate(
        dir,
        &[
            "--T",
            t,
            "--slow",
            "2",
            "--timescales",
            "0.99,0.95",
            "--mix",
            "linear",
            "--n",
            "4",
            "--noise",
            "0.1",
            "--seed",
            "7",
        ],
    )
}

fn train_linear(data: &Path, out: &Path, extra: &[&str]) -> Value {
    let mut args = vec![
        "train",
        "--data",
        p(data),
        "--model",
        "linear",
        "--optimizer",
        "sgd",
        "--lr",
        "0.05",
        "--max-steps",
        "100000",
        "--out",
        p(out),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    read_json(out.join("report.json"))
}

#[test]
fn generate_writes_requested_shapes_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let flags = [
        "--T",
        "10000",
        "--slow",
        "2",
        "--timescales",
        "0.999,0.9",
        "--mix",
        "linear",
        "--n",
        "4",
        "--seed",
        "7",
    ];
    let a = generate(&tmp.path().join("a"), &flags);
    let b = generate(&tmp.path().join("b"), &flags);
    let drivers = TimeSeries::load_csv(a.join("drivers.csv")).unwrap();
    let observed = TimeSeries::load_csv(a.join("observed.csv")).unwrap();
    assert_eq!((drivers.len(), drivers.dim()), (10000, 2));
    assert_eq!((observed.len(), observed.dim()), (10000, 4));
    for f in ["drivers.csv", "observed.csv", "spec.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let spec = read_json(a.join("spec.json"));
    assert_eq!(spec["T"], 10000);
    assert_eq!(spec["noise_std"], 0.0);
    assert_eq!(spec["mixing"]["kind"], "linear");
}

#[test]
fn generate_rejects_unordered_timescales() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vsfa(&[
        "generate",
        "--T",
        "100",
        "--slow",
        "2",
        "--timescales",
        "0.9,0.9",
        "--n",
        "4",
        "--out",
        p(tmp.path()),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("strictly decreasing"));
    assert!(!tmp.path().join("observed.csv").exists());
}

#[test]
fn linear_training_reaches_stationarity_and_echoes_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = slow_linear_data(&tmp.path().join("data"), "3000");
    let report = train_linear(&data.join("observed.csv"), &tmp.path().join("run"), &[]);
    assert_eq!(report["converged"], true);
    let model = Model::load(tmp.path().join("run/model.json")).unwrap();
    let Model::Linear(params) = &model else {
        panic!("expected linear model")
    };
    let vtv = vsfa_core::linalg::matmul_tn(&params.v, &params.v)
        .unwrap()
        .frobenius_norm();
    assert!(report["stationarity"]["r_cond"].as_f64().unwrap() < 1e-4 * vtv);
    assert!(report["stationarity"]["r_offset"].as_f64().unwrap() < 1e-6);

    let cfg = &report["config"];
    assert_eq!(cfg["beta"], 1.0);
    assert_eq!(cfg["mc_samples"], 1);
    assert_eq!(cfg["batch"]["kind"], "full");
    assert_eq!(cfg["optimizer"]["kind"], "sgd");
    let features = TimeSeries::load_csv(tmp.path().join("run/features.csv")).unwrap();
    assert_eq!((features.len(), features.dim()), (3000, 2));

    // check-linear agrees with the training report
    let check_path = tmp.path().join("check.json");
    let stdout = ok(&[
        "check-linear",
        "--model",
        p(&tmp.path().join("run/model.json")),
        "--data",
        p(&data.join("observed.csv")),
        "--out",
        p(&check_path),
    ]);
    assert!(stdout.contains("r_cond"));
    let check = read_json(&check_path);
    assert_eq!(check["r_cond"], report["stationarity"]["r_cond"]);
    assert!(check["grad_norm"].as_f64().unwrap() < 1e-7);

    // subspace agreement with classic SFA, through eval
    let eval_path = tmp.path().join("eval.json");
    ok(&[
        "eval",
        "--model",
        p(&tmp.path().join("run/model.json")),
        "--data",
        p(&data.join("observed.csv")),
        "--drivers",
        p(&data.join("drivers.csv")),
        "--out",
        p(&eval_path),
    ]);
    let metrics = &read_json(&eval_path)["metrics"];
    let angles = metrics["principal_angles_deg"].as_array().unwrap();
    assert!(angles.iter().all(|a| a.as_f64().unwrap() < 10.0), "{angles:?}");
    assert_eq!(metrics["driver_correlations"].as_array().unwrap().len(), 2);
}

#[test]
fn default_config_is_echoed_with_overrides_verbatim() {
    let tmp = tempfile::tempdir().unwrap();
    let data = slow_linear_data(&tmp.path().join("data"), "200");
    let run = tmp.path().join("run");
    ok(&[
        "train",
        "--data",
        p(&data.join("observed.csv")),
        "--beta",
        "4",
        "--max-steps",
        "5",
        "--out",
        p(&run),
    ]);
    let report = read_json(run.join("report.json"));
    let cfg = &report["config"];
    assert_eq!(cfg["beta"], 4.0);
    assert_eq!(cfg["optimizer"]["kind"], "adam");
    assert_eq!(cfg["optimizer"]["lr"], 0.001);
    assert_eq!(cfg["optimizer"]["beta1"], 0.9);
    assert_eq!(cfg["optimizer"]["beta2"], 0.999);
    assert_eq!(cfg["optimizer"]["eps"], 1e-8);
    assert_eq!(cfg["mc_samples"], 1);
    assert_eq!(cfg["batch"]["kind"], "full");
    assert_eq!(cfg["max_steps"], 5);
    assert_eq!(report["history"].as_array().unwrap().last().unwrap()["step"], 5);
}

#[test]
fn windowed_training_reports_dropped_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = slow_linear_data(&tmp.path().join("data"), "101");
    let run = tmp.path().join("run");
    ok(&[
        "train",
        "--data",
        p(&data.join("observed.csv")),
        "--window-length",
        "10",
        "--window-stride",
        "10",
        "--max-steps",
        "20",
        "--out",
        p(&run),
    ]);
    let w = &read_json(run.join("report.json"))["windows"];
    assert_eq!(w["count"], 10);
    assert_eq!(w["dropped_pairs"], 10);
    assert_eq!(w["dropped_points"], 1);
    let out = vsfa(&[
        "train",
        "--data",
        p(&data.join("observed.csv")),
        "--window-length",
        "1",
        "--window-stride",
        "1",
        "--out",
        p(&run),
    ]);
    assert!(!out.status.success());
}

#[test]
fn eval_reports_constraint_violations() {
    let tmp = tempfile::tempdir().unwrap();
    let data = slow_linear_data(&tmp.path().join("data"), "2000");
    let sfa_run = tmp.path().join("sfa");
    ok(&[
        "train",
        "--data",
        p(&data.join("observed.csv")),
        "--model",
        "sfa",
        "--out",
        p(&sfa_run),
    ]);
    ok(&[
        "eval",
        "--model",
        p(&sfa_run.join("model.json")),
        "--data",
        p(&data.join("observed.csv")),
        "--out",
        p(&sfa_run.join("eval.json")),
    ]);
    let m = &read_json(sfa_run.join("eval.json"))["metrics"];
    assert!(m["unit_variance_violation"].as_f64().unwrap() < 1e-6);
    assert!(m["decorrelation_violation"].as_f64().unwrap() < 1e-6);
    assert!(m["reconstruction_mse"].is_null());

    let random = tmp.path().join("random.json");
    Model::Linear(LinearVsfaParams::random(4, 2, 1.0, 3, 1))
        .save(&random)
        .unwrap();
    let out = tmp.path().join("random_eval.json");
    ok(&[
        "eval",
        "--model",
        p(&random),
        "--data",
        p(&data.join("observed.csv")),
        "--out",
        p(&out),
    ]);
    let m = &read_json(out)["metrics"];
    assert!(m["unit_variance_violation"].as_f64().unwrap() > 0.0);
    assert!(m["decorrelation_violation"].as_f64().unwrap() > 0.0);

    // check-linear refuses non-linear models
    let out = vsfa(&[
        "check-linear",
        "--model",
        p(&sfa_run.join("model.json")),
        "--data",
        p(&data.join("observed.csv")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("linear model"));
}

#[test]
fn sampling_rolls_the_prior() {
    let tmp = tempfile::tempdir().unwrap();
    let model_path = tmp.path().join("model.json");
    let params = LinearVsfaParams::random(3, 2, 1.0, 5, 1);
    Model::Linear(params.clone()).save(&model_path).unwrap();

    let one = tmp.path().join("one.csv");
    ok(&[
        "sample",
        "--model",
        p(&model_path),
        "--z1",
        "0,0",
        "--T",
        "1",
        "--out",
        p(&one),
    ]);
    let text = std::fs::read_to_string(&one).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "rollout,t,z1,z2,x1,x2,x3");
    let row: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(&row[4..], &params.o[..]);

    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    for f in [&a, &b] {
        ok(&[
            "sample",
            "--model",
            p(&model_path),
            "--z1",
            "0,0",
            "--T",
            "100",
            "--rollouts",
            "1000",
            "--seed",
            "3",
            "--out",
            p(f),
        ]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let all = TimeSeries::load_csv(&a).unwrap();
    let finals: Vec<&[f64]> = (0..all.len()).map(|i| all.row(i)).filter(|r| r[1] == 100.0).collect();
    assert_eq!(finals.len(), 1000);
    for j in [2, 3] {
        let mean = finals.iter().map(|r| r[j]).sum::<f64>() / 1000.0;
        let var = finals.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / 999.0;
        assert!((var - 99.0).abs() < 9.9, "variance {var}");
    }

    let missing = vsfa(&["sample", "--model", p(&model_path), "--T", "5"]);
    assert!(!missing.status.success());
    let wrong = vsfa(&[
        "sample",
        "--model",
        p(&model_path),
        "--z1",
        "0",
        "--T",
        "5",
        "--out",
        p(&a),
    ]);
    assert!(!wrong.status.success());
}

#[test]
fn io_failures_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vsfa(&[
        "train",
        "--data",
        p(&tmp.path().join("missing.csv")),
        "--out",
        p(tmp.path()),
    ]);
    assert!(!out.status.success());
    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "a,b\n1,2\n3,oops\n").unwrap();
    let out = vsfa(&["train", "--data", p(&bad), "--out", p(tmp.path())]);
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("row 3") && msg.contains("column 2"), "{msg}");
}

#[test]
fn mlp_beats_linear_slowness_on_nonlinear_data() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(
        &tmp.path().join("data"),
        &[
            "--T",
            "1000",
            "--slow",
            "2",
            "--timescales",
            "0.99,0.95",
            "--mix",
            "polynomial",
            "--n",
            "5",
            "--noise",
            "0.05",
            "--seed",
            "3",
        ],
    );
    let observed = data.join("observed.csv");
    let total_slowness = |run: &Path| {
        let eval = run.join("eval.json");
        ok(&[
            "eval",
            "--model",
            p(&run.join("model.json")),
            "--data",
            p(&observed),
            "--out",
            p(&eval),
        ]);
        read_json(eval)["metrics"]["per_feature_slowness"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .sum::<f64>()
    };
    let mut best_linear = f64::INFINITY;
    for seed in ["0", "1", "2"] {
        let run = tmp.path().join(format!("linear{seed}"));
        train_linear(&observed, &run, &["--seed", seed]);
        best_linear = best_linear.min(total_slowness(&run));
    }
    let run = tmp.path().join("mlp");
    ok(&[
        "train",
        "--data",
        p(&observed),
        "--model",
        "mlp",
        "--hidden",
        "8,4",
        "-d",
        "2",
        "--lr",
        "3e-3",
        "--max-steps",
        "1500",
        "--seed",
        "0",
        "--out",
        p(&run),
    ]);
    let mlp = total_slowness(&run);
    assert!(mlp < best_linear, "mlp {mlp} vs best linear {best_linear}");
}
