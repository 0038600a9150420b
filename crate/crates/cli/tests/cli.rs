use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;
use std::time::{Duration, Instant};

use drcurve::estimator::linspace;
use drcurve::nuisance::{
    default_floor, fit_outcome_regression, fit_treatment_density_locscale, FeatureMap, Link,
};
use drcurve::{marginalize, Covariates, CurveEstimator, Dataset, EstimatorKind, KernelSpec, VarianceMethod};
use tempfile::TempDir;

fn drcurve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drcurve")).args(args).output().expect("binary runs")
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\nstderr: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

fn read_rows(p: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(p).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

fn write_config(dir: &TempDir, name: &str, json: &str) -> PathBuf {
    let p = path(dir, name);
    std::fs::write(&p, json).unwrap();
    p
}

/// Simulation-design data exported by the binary.
fn exported(dir: &TempDir, n: usize, seed: u64) -> PathBuf {
    let p = path(dir, &format!("data_{n}_{seed}.csv"));
    assert_ok(&drcurve(&["export", "--output", s(&p), "--n", &n.to_string(), "--seed", &seed.to_string()]));
    p
}

#[test]
fn estimate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let data = exported(&dir, 1000, 11);
    let (a, b) = (path(&dir, "a.csv"), path(&dir, "b.csv"));
    for (out, jobs) in [(&a, "1"), (&b, "2")] {
        assert_ok(&drcurve(&[
            "estimate", "--input", s(&data), "--output", s(out), "--kind", "dr", "--bandwidth", "loo", "--jobs", jobs,
        ]));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read(a.with_extension("json")).unwrap(), std::fs::read(b.with_extension("json")).unwrap());
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(a.with_extension("json")).unwrap()).unwrap();
    assert_eq!(meta["kind"], "dr");
    assert_eq!(meta["bandwidth_mode"], "loo");
    assert!(meta["bandwidth"].as_f64().unwrap() > 0.0);
    assert_eq!(read_rows(&a).len(), 101);
}

/// Fits the default models (location-scale density, identity-link outcome
/// regression) through the library.
fn library_curve(data_path: &Path, kind: EstimatorKind, h: f64, grid: &[f64]) -> drcurve::EffectCurve {
    let rows = read_rows(data_path);
    let n = rows.len();
    let p = rows[0].len() - 2;
    let num = |v: &String| v.parse::<f64>().unwrap();
    let y = rows.iter().map(|r| num(&r[0])).collect();
    let a = rows.iter().map(|r| num(&r[1])).collect();
    let cov = rows.iter().flat_map(|r| r[2..].iter().map(num)).collect();
    let data =
        Dataset::with_observed_support(Covariates::from_row_major(cov, n, p).unwrap(), a, y).unwrap();
    let linear = FeatureMap::linear(p);
    let density = fit_treatment_density_locscale(&data, &linear, &linear).unwrap();
    let link = if data.has_binary_outcome() { Link::Logistic } else { Link::Identity };
    let outcome = fit_outcome_regression(&data, &FeatureMap::linear_with_treatment(p), link).unwrap();
    let fit = marginalize(&data, Arc::new(density), Arc::new(outcome), default_floor(data.support_length()));
    let est = CurveEstimator::new(&data, &fit, kind);
    let curve = est.estimate(grid, &KernelSpec::epanechnikov(h).unwrap()).unwrap();
    if kind == EstimatorKind::Reg {
        curve
    } else {
        est.add_wald_ci(&curve, 0.9, VarianceMethod::Influence).unwrap()
    }
}

fn synthetic_csv(dir: &TempDir, n: usize) -> PathBuf {
    let mut text = String::from("y,a,l1,l2\n");
    for i in 0..n {
        let t = i as f64 / n as f64;
        let l1 = (7.3 * t).sin();
        let l2 = (3.1 * t + 0.4).cos();
        let a = 2.0 + 4.0 * t + 0.8 * l1;
        let y = 0.5 * a + l2 + 0.3 * (19.0 * t).sin();
        text.push_str(&format!("{y},{a},{l1},{l2}\n"));
    }
    let p = path(dir, "synthetic.csv");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn curve_csv_round_trips() {
    let dir = TempDir::new().unwrap();
    let data = synthetic_csv(&dir, 200);
    let grid = linspace(2.5, 5.5, 7);
    let grid_json = serde_json::to_string(&grid).unwrap();
    let config = write_config(
        &dir,
        "c.json",
        &format!(r#"{{"schema": 1, "estimate": {{"grid": {{"values": {grid_json}}}, "ci_level": 0.9}}}}"#),
    );
    let out = path(&dir, "curve.csv");
    assert_ok(&drcurve(&[
        "estimate", "--input", s(&data), "--output", s(&out), "--config", s(&config), "--bandwidth", "1.1",
    ]));
    let expected = library_curve(&data, EstimatorKind::Dr, 1.1, &grid);
    let ci = expected.intervals.as_ref().unwrap();
    let rows = read_rows(&out);
    assert_eq!(rows.len(), grid.len());
    for (k, row) in rows.iter().enumerate() {
        let v: Vec<f64> = row.iter().map(|x| x.parse().unwrap()).collect();
        let want = [expected.grid[k], expected.estimates[k], ci.stderr[k], ci.lower[k], ci.upper[k]];
        for (got, want) in v.iter().zip(want) {
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
        }
    }
}

#[test]
fn regression_estimator_on_ten_rows() {
    let dir = TempDir::new().unwrap();
    let data = synthetic_csv(&dir, 10);
    let grid = linspace(2.5, 5.5, 4);
    let config = write_config(
        &dir,
        "c.json",
        &format!(
            r#"{{"schema": 1, "estimate": {{"kind": "reg", "grid": {{"values": {}}},
                "treatment_model": {{"family": "beta", "scale": 10, "precision": 10}}}}}}"#,
            serde_json::to_string(&grid).unwrap()
        ),
    );
    let out = path(&dir, "reg.csv");
    // The location-scale model needs 20 rows; the beta model does not.
    assert_ok(&drcurve(&["estimate", "--input", s(&data), "--output", s(&out), "--config", s(&config)]));
    let rows = read_rows(&out);
    assert_eq!(rows.len(), grid.len());
    assert!(rows.iter().all(|r| r[2].is_empty() && r[3].is_empty()));
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(out.with_extension("json")).unwrap()).unwrap();
    assert!(meta["bandwidth"].is_null());

    // m(a) = mean over rows of the fitted identity-link regression.
    let table: Vec<Vec<f64>> =
        read_rows(&data).iter().map(|r| r.iter().map(|v| v.parse().unwrap()).collect()).collect();
    let n = table.len();
    let features = |l1: f64, l2: f64, a: f64| [1.0, l1, l2, a, a * a, a * l1, a * l2];
    let x = nalgebra::DMatrix::from_fn(n, 7, |i, j| features(table[i][2], table[i][3], table[i][1])[j]);
    let y = nalgebra::DVector::from_fn(n, |i, _| table[i][0]);
    let beta = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
    for (row, &g) in rows.iter().zip(&grid) {
        let m = table.iter().map(|r| {
            let f = features(r[2], r[3], g);
            (0..7).map(|j| f[j] * beta[j]).sum::<f64>()
        });
        let m = m.sum::<f64>() / n as f64;
        let got: f64 = row[1].parse().unwrap();
        assert!((got - m).abs() < 1e-8, "{got} vs {m}");
    }
}

#[test]
fn missing_column_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let bad = path(&dir, "bad.csv");
    std::fs::write(&bad, "y,l1\n1,2\n0,3\n").unwrap();
    let out = drcurve(&["estimate", "--input", s(&bad), "--output", s(&path(&dir, "o.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`a`"));

    std::fs::write(&bad, "y,a\n1,2\n0,x\n").unwrap();
    let out = drcurve(&["estimate", "--input", s(&bad), "--output", s(&path(&dir, "o.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2, column `a`"));
}

#[test]
fn invalid_configs_are_input_errors() {
    let dir = TempDir::new().unwrap();
    let data = synthetic_csv(&dir, 50);
    for (name, json) in [
        ("schema.json", r#"{"schema": 2}"#),
        ("unknown.json", r#"{"schema": 1, "estimate": {"kernal": "uniform"}}"#),
        ("level.json", r#"{"schema": 1, "estimate": {"ci_level": 1.5}}"#),
        ("noschema.json", r#"{"estimate": {}}"#),
    ] {
        let config = write_config(&dir, name, json);
        let out = drcurve(&["estimate", "--input", s(&data), "--output", s(&path(&dir, "o.csv")), "--config", s(&config)]);
        assert_eq!(out.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = drcurve(&["estimate", "--input", s(&data), "--output", s(&path(&dir, "o.csv")), "--bandwidth", "wide"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn all_singular_grid_is_a_numerical_failure() {
    let dir = TempDir::new().unwrap();
    let data = synthetic_csv(&dir, 50);
    // No observation lies within 1e-6 of these points.
    let config = write_config(&dir, "c.json", r#"{"schema": 1, "estimate": {"grid": {"values": [2.51234, 4.04321]}}}"#);
    let out = drcurve(&[
        "estimate", "--input", s(&data), "--output", s(&path(&dir, "o.csv")), "--config", s(&config),
        "--bandwidth", "1e-6",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

fn bandwidth_stdout(args: &[&str]) -> String {
    let out = drcurve(args);
    assert_ok(&out);
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn bandwidth_command() {
    let dir = TempDir::new().unwrap();
    let data = exported(&dir, 400, 5);
    let table = path(&dir, "risk.csv");
    let first = bandwidth_stdout(&["bandwidth", "--input", s(&data), "--output", s(&table)]);
    let second = bandwidth_stdout(&["bandwidth", "--input", s(&data)]);
    assert_eq!(first, second);
    let h: f64 = first.lines().next().unwrap().strip_prefix("h = ").unwrap().parse().unwrap();
    assert!(h > 0.0);
    let rows = read_rows(&table);
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().any(|r| r[1].parse::<f64>().unwrap().is_finite()));

    let fixed = bandwidth_stdout(&["bandwidth", "--input", s(&data), "--h-min", "4", "--h-max", "4"]);
    assert_eq!(fixed.lines().next().unwrap(), "h = 4");

    let out = drcurve(&["bandwidth", "--input", s(&data), "--h-min", "1e-6", "--h-max", "1e-6"]);
    assert_eq!(out.status.code(), Some(3));
    let out = drcurve(&["bandwidth", "--input", s(&data), "--kind", "reg"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_smoke_and_determinism() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        &dir,
        "sim.json",
        r#"{"schema": 1, "simulation": {"n": 100, "replications": 2, "treatment_model": "correct",
            "outcome_model": "misspecified", "bandwidth_modes": ["loo", "oracle"]}}"#,
    );
    let (a, b) = (path(&dir, "a.csv"), path(&dir, "b.csv"));
    let start = Instant::now();
    let out = drcurve(&["simulate", "--config", s(&config), "--output", s(&a)]);
    assert_ok(&out);
    assert!(start.elapsed() < Duration::from_secs(10), "took {:?}", start.elapsed());
    assert!(String::from_utf8_lossy(&out.stderr).contains("2/2 replications"));
    assert_ok(&drcurve(&["simulate", "--config", s(&config), "--output", s(&b)]));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read(a.with_extension("json")).unwrap(), std::fs::read(b.with_extension("json")).unwrap());

    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(a.with_extension("json")).unwrap()).unwrap();
    assert_eq!(report["completed"], 2);
    assert_eq!(report["correct_model"], "Treatment");
    assert_eq!(read_rows(&a).len(), 5);

    let no_section = write_config(&dir, "empty.json", r#"{"schema": 1}"#);
    let out = drcurve(&["simulate", "--config", s(&no_section), "--output", s(&a)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn export_truth_table() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "truth.csv");
    assert_ok(&drcurve(&["export", "--what", "truth", "--output", s(&out), "--n", "21"]));
    let rows = read_rows(&out);
    assert_eq!(rows.len(), 21);
    let theta: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(theta.iter().all(|t| (0.0..=1.0).contains(t)));
}
