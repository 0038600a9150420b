mod common;

use std::sync::Arc;

use drcurve::estimator::{linspace, smoothed_target};
use drcurve::nuisance::ZeroRegression;
use drcurve::simulate::diagnostics::theta_second_derivative;
use drcurve::simulate::dgp::SUPPORT;
use drcurve::simulate::{fit_simulation_nuisance, generate_data, ModelSpec, TruthOracle};
use drcurve::{
    add_wald_ci, estimate_curve, kernel_moments, CurveEstimator, EstimatorKind, KernelFamily, KernelSpec,
    VarianceMethod,
};

#[test]
fn dr_curve_at_ten_thousand_tracks_the_truth() {
    let oracle = TruthOracle::shared();
    let data = generate_data(10_000, 77);
    let fit = fit_simulation_nuisance(&data, ModelSpec::Correct, ModelSpec::Correct).unwrap();
    let (lo, hi) = oracle.trimmed_support(0.05);
    let grid = linspace(lo, hi, 41);
    let curve = estimate_curve(&data, &fit, &grid, &KernelSpec::epanechnikov(1.0).unwrap(), EstimatorKind::Dr)
        .unwrap();
    assert_eq!(curve.len(), grid.len());
    let worst = curve.grid.iter().zip(&curve.estimates).map(|(&a, &e)| (e - oracle.theta(a)).abs()).fold(0.0, f64::max);
    assert!(worst < 0.05, "max error {worst} over [{lo:.2}, {hi:.2}]");
}

#[test]
fn smoothing_bias_matches_second_derivative_term() {
    let oracle = TruthOracle::shared();
    let (a, h) = (8.0, 0.05);
    let spec = KernelSpec::epanechnikov(h).unwrap();
    let target = smoothed_target(a, &spec, |t| oracle.theta_exact(t), |t| oracle.varpi(t), SUPPORT).unwrap();
    let bias = target - oracle.theta_exact(a);
    let leading = theta_second_derivative(oracle, a, 0.05) * h * h / 2.0 * kernel_moments(&spec).nu2;
    let ratio = bias / leading;
    assert!((ratio - 1.0).abs() < 0.1, "bias {bias:e}, leading term {leading:e}, ratio {ratio}");
}

#[test]
fn ipw_is_dr_with_zero_regression() {
    let data = generate_data(600, 5);
    let fit = fit_simulation_nuisance(&data, ModelSpec::Correct, ModelSpec::Correct).unwrap();
    let spec = KernelSpec::new(KernelFamily::Uniform, 1.5).unwrap();
    let grid = linspace(3.0, 12.0, 10);
    let ipw = estimate_curve(&data, &fit, &grid, &spec, EstimatorKind::Ipw).unwrap();
    let dr0 = estimate_curve(&data, &fit.with_outcome(Arc::new(ZeroRegression)), &grid, &spec, EstimatorKind::Dr)
        .unwrap();
    assert_eq!(ipw.estimates, dr0.estimates);
}

#[test]
fn regression_estimator_is_the_marginal_regression() {
    let data = generate_data(300, 6);
    let fit = fit_simulation_nuisance(&data, ModelSpec::Correct, ModelSpec::Misspecified).unwrap();
    let grid = linspace(2.0, 14.0, 7);
    let curve = estimate_curve(&data, &fit, &grid, &KernelSpec::epanechnikov(1.0).unwrap(), EstimatorKind::Reg)
        .unwrap();
    for (&a, &e) in grid.iter().zip(&curve.estimates) {
        let direct = data.covariates().rows().map(|l| fit.outcome_reg(l, a)).sum::<f64>() / data.len() as f64;
        assert!((e - direct).abs() < 1e-12);
    }
}

#[test]
fn interval_widths_scale_with_level_and_methods_agree_roughly() {
    let data = generate_data(1000, 13);
    let fit = fit_simulation_nuisance(&data, ModelSpec::Correct, ModelSpec::Correct).unwrap();
    let spec = KernelSpec::epanechnikov(1.2).unwrap();
    let grid = [5.0, 8.0, 11.0];
    let curve = estimate_curve(&data, &fit, &grid, &spec, EstimatorKind::Dr).unwrap();
    let narrow = add_wald_ci(&curve, &data, &fit, 0.80, VarianceMethod::Influence).unwrap();
    let wide = add_wald_ci(&curve, &data, &fit, 0.99, VarianceMethod::Influence).unwrap();
    let resid = add_wald_ci(&curve, &data, &fit, 0.95, VarianceMethod::Residual).unwrap();
    let infl = add_wald_ci(&curve, &data, &fit, 0.95, VarianceMethod::Influence).unwrap();
    let (n, w) = (narrow.intervals.unwrap(), wide.intervals.unwrap());
    for k in 0..grid.len() {
        assert!(w.lower[k] < n.lower[k] && n.upper[k] < w.upper[k]);
        // z(0.995) / z(0.90) = 2.5758 / 1.2816
        let ratio = (w.upper[k] - w.lower[k]) / (n.upper[k] - n.lower[k]);
        assert!((ratio - 2.575_829_3 / 1.281_551_6).abs() < 1e-6, "{ratio}");
        let (se_r, se_i) = (resid.intervals.as_ref().unwrap().stderr[k], infl.intervals.as_ref().unwrap().stderr[k]);
        assert!(se_r > 0.0 && se_i > 0.0 && (se_r / se_i - 1.0).abs() < 0.5, "{se_r} vs {se_i}");
    }
}

#[test]
fn estimator_reuses_pseudo_outcomes_across_bandwidths() {
    let data = generate_data(400, 21);
    let fit = fit_simulation_nuisance(&data, ModelSpec::Misspecified, ModelSpec::Correct).unwrap();
    let est = CurveEstimator::new(&data, &fit, EstimatorKind::Dr);
    let grid = [6.0, 9.0];
    for h in [0.8, 1.6, 3.2] {
        let spec = KernelSpec::epanechnikov(h).unwrap();
        assert_eq!(est.estimate(&grid, &spec).unwrap(), estimate_curve(&data, &fit, &grid, &spec, EstimatorKind::Dr).unwrap());
    }
}
