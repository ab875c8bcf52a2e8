use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pdi_core::eval::{fit_policy, fitted_weights, FitSettings, Method};
use pdi_core::io::{read_covariates_path, read_dataset_path, ModelFile};
use pdi_core::kernel::eval as kernel_eval;
use pdi_core::simulation::ScenarioSpec;
use pdi_core::types::{DoseBounds, IntervalPolicy, Side, ThresholdSpec};
use pdi_core::FittedPolicy;

fn pdi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = pdi(args);
    assert!(
        out.status.success(),
        "pdi {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("sim");
    let mut args = vec!["simulate", "--out", s(&out), "--n", "120", "--test-n", "300", "--seed", "11"];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

#[test]
fn simulate_is_seed_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let a = t.path().join("a");
    let b = t.path().join("b");
    for dir in [&a, &b] {
        ok(&["simulate", "--out", s(dir), "--n", "50", "--test-n", "40", "--seed", "3"]);
    }
    for f in ["train.csv", "test.csv", "dgp.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    let train = std::fs::read_to_string(a.join("train.csv")).unwrap();
    assert_eq!(train.lines().count(), 51);
    assert!(train.starts_with("x1,x2,x3,x4,x5,x6,x7,x8,x9,x10,a,y\n"));
    let config = std::fs::read_to_string(a.join("config.txt")).unwrap();
    assert!(config.contains("seed = 3") && config.contains("n = 50"));
}

#[test]
fn sidecar_reproduces_test_weights() {
    let t = tempfile::tempdir().unwrap();
    let sim = simulate(t.path(), &[]);
    let spec: ScenarioSpec =
        serde_json::from_str(&std::fs::read_to_string(sim.join("dgp.json")).unwrap()).unwrap();
    let test = read_dataset_path(&sim.join("test.csv"), spec.bounds()).unwrap();
    let x = test.x.row(0);
    let a = test.a[0];
    // truncated N(0.3 (x1 + x2 + x3), 0.5) on [-2, 2]; mass by Simpson's rule
    let mu = 0.3 * (x[0] + x[1] + x[2]);
    let sd = 0.5_f64.sqrt();
    let pdf = |v: f64| (-0.5 * ((v - mu) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
    let m = 4000;
    let h = 4.0 / m as f64;
    let mass: f64 = (0..=m)
        .map(|k| {
            let c = if k == 0 || k == m { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            c * pdf(-2.0 + k as f64 * h)
        })
        .sum::<f64>()
        * h
        / 3.0;
    let hand = mass / pdf(a) / 4.0;
    let stored = test.w.as_ref().unwrap()[0];
    assert!((hand - stored).abs() < 1e-9 * hand.max(1.0), "{hand} vs {stored}");
}

#[test]
fn fit_requires_a_weight_source() {
    let t = tempfile::tempdir().unwrap();
    let sim = simulate(t.path(), &[]);
    let out = pdi(&["fit", "--data", s(&sim.join("train.csv")), "--out", s(&t.path().join("f"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("no weight source"), "{err}");
    let out = pdi(&["fit", "--data", s(&sim.join("train.csv")), "--weights", "true", "--out", s(&t.path().join("f"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--dgp"));
}

#[test]
fn validation_errors_carry_row_context() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("bad.csv");
    std::fs::write(&data, "x1,a,y,w\n0.1,0.5,1,1\n0.2,7.0,1,1\n").unwrap();
    let out = pdi(&["fit", "--data", s(&data), "--out", s(&t.path().join("f"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2"), "{err}");
    let out = pdi(&["fit", "--data", s(&data), "--set", "alhpa=0.3", "--out", s(&t.path().join("f"))]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown flag key `alhpa`"));
}

#[test]
fn refit_is_byte_identical_and_matches_library() {
    let t = tempfile::tempdir().unwrap();
    let sim = simulate(t.path(), &[]);
    let train = sim.join("train.csv");
    let (f1, f2) = (t.path().join("f1"), t.path().join("f2"));
    for dir in [&f1, &f2] {
        ok(&[
            "fit", "--data", s(&train), "--dgp", s(&sim.join("dgp.json")), "--weights", "fit",
            "--lambda-grid", "0.01", "--out", s(dir),
        ]);
    }
    let m1 = std::fs::read(f1.join("model.json")).unwrap();
    assert_eq!(m1, std::fs::read(f2.join("model.json")).unwrap());

    // the same fit through the library
    let data = read_dataset_path(&train, DoseBounds::new(-2.0, 2.0).unwrap()).unwrap();
    let w = fitted_weights(&data, 100.0, true).unwrap();
    let data = data.with_weights(w).unwrap();
    let th = ThresholdSpec::fit_polynomial(&data.x, &data.y).unwrap();
    let settings = FitSettings::new(Method::LoLinear, Side::LowerOneSided, 0.5)
        .resolved(&data)
        .unwrap();
    let direct = fit_policy(&data, &th, &settings, 0.01).unwrap();
    let stored = ModelFile::load(&f1.join("model.json")).unwrap();
    assert_eq!(stored.policy, direct);

    ok(&["predict", "--model", s(&f1.join("model.json")), "--data", s(&sim.join("test.csv")), "--out", s(&t.path().join("p"))]);
    let pred = std::fs::read_to_string(t.path().join("p/predictions.csv")).unwrap();
    let x = read_covariates_path(&sim.join("test.csv")).unwrap();
    let mut lines = pred.lines();
    assert_eq!(lines.next(), Some("lower"));
    for (row, line) in x.rows_iter().zip(lines) {
        let v: f64 = line.parse().unwrap();
        assert_eq!(v, direct.interval(row).0);
    }
}

#[test]
fn predict_spot_value_and_clipping() {
    let t = tempfile::tempdir().unwrap();
    let sim = simulate(t.path(), &[]);
    let fit_dir = t.path().join("f");
    ok(&[
        "fit", "--data", s(&sim.join("train.csv")), "--dgp", s(&sim.join("dgp.json")),
        "--weights", "true", "--method", "lo-gaussian", "--side", "two-sided",
        "--lambda-grid", "0.05", "--out", s(&fit_dir),
    ]);
    ok(&["predict", "--model", s(&fit_dir.join("model.json")), "--data", s(&sim.join("test.csv")), "--out", s(&t.path().join("p"))]);
    let pred = std::fs::read_to_string(t.path().join("p/predictions.csv")).unwrap();
    let mut lines = pred.lines();
    assert_eq!(lines.next(), Some("lower,upper"));
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 300);
    for &(lo, hi) in &rows {
        assert!((-2.0..=2.0).contains(&lo) && (-2.0..=2.0).contains(&hi));
        assert!(lo <= hi);
    }

    // hand evaluation of the stored kernel expansion on the first row
    let model = ModelFile::load(&fit_dir.join("model.json")).unwrap();
    let FittedPolicy::Direct(m) = &model.policy else { panic!("direct model expected") };
    let x = read_covariates_path(&sim.join("test.csv")).unwrap();
    let row = x.row(0);
    let upper = m.upper.as_ref().unwrap();
    let raw: f64 = upper
        .coef
        .iter()
        .enumerate()
        .map(|(j, c)| c * kernel_eval(&upper.kernel, row, upper.support.row(j)))
        .sum::<f64>()
        + upper.intercept;
    assert!((raw.clamp(-2.0, 2.0) - rows[0].1).abs() < 1e-12);
}

#[test]
fn predict_rejects_dimension_mismatch() {
    let t = tempfile::tempdir().unwrap();
    let sim = simulate(t.path(), &[]);
    let fit_dir = t.path().join("f");
    ok(&[
        "fit", "--data", s(&sim.join("train.csv")), "--dgp", s(&sim.join("dgp.json")),
        "--weights", "fit", "--lambda-grid", "0.1", "--out", s(&fit_dir),
    ]);
    let narrow = t.path().join("narrow.csv");
    std::fs::write(&narrow, "x1,x2\n0.1,0.2\n").unwrap();
    let out = pdi(&["predict", "--model", s(&fit_dir.join("model.json")), "--data", s(&narrow), "--out", s(&t.path().join("p"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension mismatch"));
}

#[test]
fn evaluate_reports_risk() {
    let t = tempfile::tempdir().unwrap();
    let sim = simulate(t.path(), &[]);
    let fit_dir = t.path().join("f");
    ok(&[
        "fit", "--data", s(&sim.join("train.csv")), "--dgp", s(&sim.join("dgp.json")),
        "--weights", "fit", "--method", "indirect-logistic", "--out", s(&fit_dir),
    ]);
    let text = ok(&["evaluate", "--model", s(&fit_dir.join("model.json")), "--data", s(&sim.join("test.csv")), "--out", s(&t.path().join("e"))]);
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    let r = report["risk"].as_f64().unwrap();
    let (fp, fneg) = (report["fp_mass"].as_f64().unwrap(), report["fn_mass"].as_f64().unwrap());
    assert_eq!(r, 0.5 * fp + 0.5 * fneg);
    assert!(t.path().join("e/risk.json").exists());
    assert!(fit_dir.join("cv.csv").exists());
}

#[test]
fn benchmark_smoke_run() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("b");
    let start = std::time::Instant::now();
    ok(&["benchmark", "--n", "200", "--d", "10", "--reps", "1", "--test-n", "2000", "--out", s(&out)]);
    assert!(start.elapsed().as_secs() < 60, "took {:?}", start.elapsed());
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("scenario,sigma2,n,d,method,mean_risk,sd_risk,n_reps,n_fail")
    );
    let body: Vec<&str> = lines.collect();
    assert_eq!(body.len(), 3);
    for line in body {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 9);
        assert_eq!(f[7], "1");
        assert_eq!(f[8], "0");
        let risk: f64 = f[5].parse().unwrap();
        assert!((0.0..1.0).contains(&risk));
    }
    assert!(out.join("results.txt").exists() && out.join("config.txt").exists());
}

#[test]
fn benchmark_output_independent_of_jobs() {
    let t = tempfile::tempdir().unwrap();
    let mut tables = Vec::new();
    for jobs in ["1", "4"] {
        let out = t.path().join(format!("j{jobs}"));
        ok(&[
            "benchmark", "--n", "80", "--d", "4", "--reps", "2", "--test-n", "500",
            "--methods", "lo-linear,indirect-logistic", "--seed", "9",
            "--jobs", jobs, "--out", s(&out),
        ]);
        tables.push(
            ["results.csv", "results.txt", "replications.csv"]
                .map(|f| std::fs::read(out.join(f)).unwrap()),
        );
    }
    assert_eq!(tables[0], tables[1]);
}
