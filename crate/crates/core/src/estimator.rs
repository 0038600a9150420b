//! Effect-curve estimation over a grid for the regression (plug-in), IPW and
//! doubly robust estimators, with pointwise Wald intervals.
//!
//! Intervals cover the kernel-smoothed curve theta*_h(a), not theta(a).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{KernelFamily, KernelSpec, LocalSmoother, SINGULARITY_TOLERANCE};
use crate::numeric::{integrate, quantile};
use crate::nuisance::NuisanceFit;
use crate::pseudo::{compute_pseudo, influence_values, PseudoOutcomes, DEFAULT_QUAD_PANELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Marginalized outcome regression m(a).
    Reg,
    /// Local linear smoothing of the pseudo-outcome with mu = 0.
    Ipw,
    /// Local linear smoothing of the doubly robust pseudo-outcome.
    Dr,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Reg => "reg",
            Self::Ipw => "ipw",
            Self::Dr => "dr",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Reg => "Reg",
            Self::Ipw => "IPW",
            Self::Dr => "DR",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reg" => Ok(Self::Reg),
            "ipw" => Ok(Self::Ipw),
            "dr" => Ok(Self::Dr),
            other => Err(Error::InvalidInput(format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    /// Empirical variance of the influence-function values.
    #[default]
    Influence,
    /// Linear-smoother variance with a local-constant residual variance.
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldIntervals {
    pub level: f64,
    pub method: VarianceMethod,
    pub stderr: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectCurve {
    pub kind: EstimatorKind,
    pub kernel: KernelFamily,
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub estimates: Vec<f64>,
    /// Requested grid points dropped because the local design was singular.
    pub skipped: Vec<f64>,
    pub floored_count: usize,
    pub intervals: Option<WaldIntervals>,
}

impl EffectCurve {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

/// Normal quantile multiplier for a two-sided interval at `level`.
pub fn wald_multiplier(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("confidence level {level} not in (0, 1)")));
    }
    Ok(Normal::standard().inverse_cdf(0.5 + 0.5 * level))
}

/// `points` equispaced values between the 5th and 95th percentiles of the
/// observed treatments.
pub fn default_grid(treatments: &[f64], points: usize) -> Vec<f64> {
    quantile_grid(treatments, 0.05, 0.95, points)
}

pub fn quantile_grid(treatments: &[f64], lower: f64, upper: f64, points: usize) -> Vec<f64> {
    let mut sorted = treatments.to_vec();
    sorted.sort_by(f64::total_cmp);
    linspace(quantile(&sorted, lower), quantile(&sorted, upper), points)
}

pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..points).map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64).collect(),
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty evaluation grid".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidInput("grid must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// Estimator with its pseudo-outcomes computed once.
#[derive(Debug, Clone)]
pub struct CurveEstimator<'a> {
    data: &'a Dataset,
    fit: NuisanceFit,
    kind: EstimatorKind,
    pseudo: Option<PseudoOutcomes>,
}

impl<'a> CurveEstimator<'a> {
    pub fn new(data: &'a Dataset, fit: &NuisanceFit, kind: EstimatorKind) -> Self {
        let fit = if kind == EstimatorKind::Ipw { fit.without_outcome() } else { fit.clone() };
        let pseudo = (kind != EstimatorKind::Reg).then(|| compute_pseudo(data, &fit));
        Self { data, fit, kind, pseudo }
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    pub fn fit(&self) -> &NuisanceFit {
        &self.fit
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    /// Pseudo-outcomes (absent for the regression estimator).
    pub fn pseudo(&self) -> Option<&PseudoOutcomes> {
        self.pseudo.as_ref()
    }

    pub fn estimate(&self, grid: &[f64], spec: &KernelSpec) -> Result<EffectCurve> {
        check_grid(grid)?;
        let Some(pseudo) = &self.pseudo else {
            return Ok(EffectCurve {
                kind: self.kind,
                kernel: spec.family,
                bandwidth: spec.bandwidth,
                grid: grid.to_vec(),
                estimates: self.fit.reg_curve_many(grid),
                skipped: Vec::new(),
                floored_count: 0,
                intervals: None,
            });
        };
        let smoother = LocalSmoother::new(self.data.treatment(), spec);
        let fits: Vec<Result<f64>> =
            grid.par_iter().map(|&a| smoother.fit(a, &pseudo.values).map(|f| f.intercept)).collect();
        let mut curve = EffectCurve {
            kind: self.kind,
            kernel: spec.family,
            bandwidth: spec.bandwidth,
            grid: Vec::with_capacity(grid.len()),
            estimates: Vec::with_capacity(grid.len()),
            skipped: Vec::new(),
            floored_count: pseudo.floored_count,
            intervals: None,
        };
        for (&a, r) in grid.iter().zip(fits) {
            match r {
                Ok(v) => {
                    curve.grid.push(a);
                    curve.estimates.push(v);
                }
                Err(Error::SingularDesign { .. }) => curve.skipped.push(a),
                Err(e) => return Err(e),
            }
        }
        if curve.grid.is_empty() {
            return Err(Error::SingularDesign { center: grid[0] });
        }
        Ok(curve)
    }

    pub fn add_wald_ci(
        &self,
        curve: &EffectCurve,
        level: f64,
        method: VarianceMethod,
    ) -> Result<EffectCurve> {
        let z = wald_multiplier(level)?;
        let pseudo = self.pseudo.as_ref().ok_or_else(|| {
            Error::InvalidInput("Wald intervals are only available for the ipw and dr estimators".into())
        })?;
        let spec = KernelSpec::new(curve.kernel, curve.bandwidth)?;
        let smoother = LocalSmoother::new(self.data.treatment(), &spec);
        let n = self.data.len() as f64;
        let stderr: Vec<f64> = match method {
            VarianceMethod::Influence => curve
                .grid
                .par_iter()
                .map(|&a| {
                    let beta = smoother.fit(a, &pseudo.values)?.as_array();
                    let phi =
                        influence_values(self.data, &self.fit, pseudo, a, &spec, beta, DEFAULT_QUAD_PANELS)?;
                    Ok((phi.variance() / n).sqrt())
                })
                .collect::<Result<_>>()?,
            VarianceMethod::Residual => {
                let local_var = residual_variance(&smoother, self.data.treatment(), &pseudo.values, &spec);
                curve
                    .grid
                    .par_iter()
                    .map(|&a| {
                        let w = smoother.weights(a)?;
                        Ok(w.iter().map(|&(i, wi)| wi * wi * local_var[i]).sum::<f64>().sqrt())
                    })
                    .collect::<Result<_>>()?
            }
        };
        let mut out = curve.clone();
        out.intervals = Some(WaldIntervals {
            level,
            method,
            lower: curve.estimates.iter().zip(&stderr).map(|(e, s)| e - z * s).collect(),
            upper: curve.estimates.iter().zip(&stderr).map(|(e, s)| e + z * s).collect(),
            stderr,
        });
        Ok(out)
    }
}

/// Local-constant estimate of var(xi | A = A_i) from the squared residuals of
/// the local linear fit, using the same kernel and bandwidth.
fn residual_variance(smoother: &LocalSmoother, treatments: &[f64], responses: &[f64], spec: &KernelSpec) -> Vec<f64> {
    let resid_sq: Vec<Option<f64>> = treatments
        .par_iter()
        .zip(responses)
        .map(|(&a, &y)| smoother.fit(a, responses).ok().map(|f| (y - f.intercept).powi(2)))
        .collect();
    let mut sorted: Vec<(f64, f64)> = treatments
        .iter()
        .zip(&resid_sq)
        .filter_map(|(&a, r)| r.map(|r| (a, r)))
        .collect();
    sorted.sort_by(|x, y| x.0.total_cmp(&y.0));
    let h = spec.bandwidth;
    treatments
        .par_iter()
        .map(|&a| {
            let start = sorted.partition_point(|&(t, _)| t < a - h);
            let (mut num, mut den) = (0.0, 0.0);
            for &(t, r) in sorted[start..].iter().take_while(|&&(t, _)| t <= a + h) {
                let k = spec.weight(t, a);
                num += k * r;
                den += k;
            }
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        })
        .collect()
}

/// Local linear curve of the chosen kind on `grid`, without intervals.
pub fn estimate_curve(
    data: &Dataset,
    fit: &NuisanceFit,
    grid: &[f64],
    spec: &KernelSpec,
    kind: EstimatorKind,
) -> Result<EffectCurve> {
    CurveEstimator::new(data, fit, kind).estimate(grid, spec)
}

/// Adds pointwise Wald intervals to a curve from `estimate_curve`.
pub fn add_wald_ci(
    curve: &EffectCurve,
    data: &Dataset,
    fit: &NuisanceFit,
    level: f64,
    method: VarianceMethod,
) -> Result<EffectCurve> {
    CurveEstimator::new(data, fit, curve.kind).add_wald_ci(curve, level, method)
}

/// Kernel-weighted projection theta*_h(a) of a known curve `theta` under the
/// treatment density `varpi` supported on `support`.
pub fn smoothed_target<T, D>(a: f64, spec: &KernelSpec, theta: T, varpi: D, support: (f64, f64)) -> Result<f64>
where
    T: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let h = spec.bandwidth;
    let lo = (a - h).max(support.0);
    let hi = (a + h).min(support.1);
    let moment = |f: &dyn Fn(f64) -> f64| integrate(|t| spec.weight(t, a) * varpi(t) * f(t), lo, hi, 32, 10);
    let u = |t: f64| (t - a) / h;
    let s0 = moment(&|_| 1.0);
    let s1 = moment(&|t| u(t));
    let s2 = moment(&|t| u(t) * u(t));
    let r0 = moment(&|t| theta(t));
    let r1 = moment(&|t| u(t) * theta(t));
    let det = s0 * s2 - s1 * s1;
    let scale = 0.5 * (s0 + s2);
    if !(s0 > 0.0) || !(det > SINGULARITY_TOLERANCE * scale * scale) {
        return Err(Error::SingularDesign { center: a });
    }
    Ok((s2 * r0 - s1 * r1) / det)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Covariates;
    use crate::kernels::{local_linear_fit, smoother_row};
    use crate::nuisance::{marginalize, FnDensity, FnRegression, ZeroRegression};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::sync::Arc;

    fn normal_pdf(z: f64) -> f64 {
        (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    fn instance(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cov = Vec::new();
        let mut a = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let l: f64 = rng.sample(StandardNormal);
            let t = (5.0 + l + rng.sample::<f64, _>(StandardNormal)).clamp(0.01, 9.99);
            cov.push(l);
            a.push(t);
            y.push(0.5 * l + (0.5 * t).sin() + 0.5 * rng.sample::<f64, _>(StandardNormal));
        }
        Dataset::new(Covariates::from_row_major(cov, n, 1).unwrap(), a, y, (0.0, 10.0)).unwrap()
    }

    fn fit_for(data: &Dataset, shift: f64) -> NuisanceFit {
        marginalize(
            data,
            Arc::new(FnDensity(|l: &[f64], a: f64| normal_pdf(a - 5.0 - l[0]))),
            Arc::new(FnRegression(move |l: &[f64], a: f64| 0.5 * l[0] + (0.5 * a).sin() + shift)),
            1e-4,
        )
    }

    #[test]
    fn multipliers() {
        assert!((wald_multiplier(0.95).unwrap() - 1.96).abs() < 1e-3);
        assert!((wald_multiplier(0.90).unwrap() - 1.645).abs() < 1e-3);
        assert!(wald_multiplier(1.0).is_err());
    }

    #[test]
    fn reg_curve_is_marginal_regression() {
        let data = instance(50, 1);
        let fit = fit_for(&data, 0.0);
        let grid = default_grid(data.treatment(), 11);
        let spec = KernelSpec::epanechnikov(1.0).unwrap();
        let curve = estimate_curve(&data, &fit, &grid, &spec, EstimatorKind::Reg).unwrap();
        for (a, e) in curve.grid.iter().zip(&curve.estimates) {
            assert_eq!(*e, fit.reg_curve(*a));
        }
    }

    #[test]
    fn dr_curve_matches_dense_smoother_and_direct_fit() {
        let data = instance(200, 2);
        let fit = fit_for(&data, 0.0);
        let spec = KernelSpec::epanechnikov(1.3).unwrap();
        let grid = default_grid(data.treatment(), 25);
        let est = CurveEstimator::new(&data, &fit, EstimatorKind::Dr);
        let curve = est.estimate(&grid, &spec).unwrap();
        let xi = &est.pseudo().unwrap().values;
        for (a, e) in curve.grid.iter().zip(&curve.estimates) {
            let row = smoother_row(data.treatment(), *a, &spec).unwrap();
            let composed: f64 = row.iter().zip(xi).map(|(w, x)| w * x).sum();
            let direct = local_linear_fit(data.treatment(), xi, *a, &spec).unwrap().intercept;
            assert!((composed - e).abs() < 1e-12);
            assert!((direct - e).abs() < 1e-12);
        }
    }

    #[test]
    fn ipw_equals_dr_with_zero_outcome() {
        let data = instance(150, 3);
        let fit = fit_for(&data, 0.0);
        let zero = fit.with_outcome(Arc::new(ZeroRegression));
        let spec = KernelSpec::epanechnikov(1.5).unwrap();
        let grid = default_grid(data.treatment(), 15);
        let ipw = estimate_curve(&data, &fit, &grid, &spec, EstimatorKind::Ipw).unwrap();
        let dr0 = estimate_curve(&data, &zero, &grid, &spec, EstimatorKind::Dr).unwrap();
        for (x, y) in ipw.estimates.iter().zip(&dr0.estimates) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn outcome_shift_equivariance() {
        let data = instance(150, 4);
        let c = 2.75;
        let shifted = data.with_outcome(data.outcome().iter().map(|y| y + c).collect()).unwrap();
        let spec = KernelSpec::epanechnikov(1.5).unwrap();
        let grid = default_grid(data.treatment(), 15);
        let base = estimate_curve(&data, &fit_for(&data, 0.0), &grid, &spec, EstimatorKind::Dr).unwrap();
        let moved = estimate_curve(&shifted, &fit_for(&shifted, c), &grid, &spec, EstimatorKind::Dr).unwrap();
        for (x, y) in base.estimates.iter().zip(&moved.estimates) {
            assert!((y - x - c).abs() < 1e-10);
        }
    }

    #[test]
    fn affine_pseudo_outcomes_reproduced() {
        // No covariates: xi = Y, and Y exactly affine in A.
        let n = 80;
        let a: Vec<f64> = (0..n).map(|i| 0.1 + 9.8 * i as f64 / (n - 1) as f64).collect();
        let y: Vec<f64> = a.iter().map(|t| 1.5 - 0.2 * t).collect();
        let data = Dataset::new(Covariates::empty(n), a, y, (0.0, 10.0)).unwrap();
        let fit = marginalize(&data, Arc::new(FnDensity(|_: &[f64], _: f64| 0.1)), Arc::new(ZeroRegression), 1e-4);
        let spec = KernelSpec::epanechnikov(0.9).unwrap();
        let grid = linspace(1.0, 9.0, 33);
        let curve = estimate_curve(&data, &fit, &grid, &spec, EstimatorKind::Dr).unwrap();
        for (g, e) in curve.grid.iter().zip(&curve.estimates) {
            assert!((e - (1.5 - 0.2 * g)).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_points_are_skipped() {
        let data = instance(60, 5);
        let fit = fit_for(&data, 0.0);
        let spec = KernelSpec::epanechnikov(0.3).unwrap();
        let grid = vec![0.05, 5.0, 9.95];
        let curve = estimate_curve(&data, &fit, &grid, &spec, EstimatorKind::Dr).unwrap();
        assert_eq!(curve.grid, vec![5.0]);
        assert_eq!(curve.skipped, vec![0.05, 9.95]);
        assert!(estimate_curve(&data, &fit, &[0.01], &spec, EstimatorKind::Dr).is_err());
    }

    #[test]
    fn intervals_bracket_estimates() {
        let data = instance(300, 6);
        let fit = fit_for(&data, 0.3);
        let spec = KernelSpec::epanechnikov(1.2).unwrap();
        let grid = default_grid(data.treatment(), 21);
        let est = CurveEstimator::new(&data, &fit, EstimatorKind::Dr);
        let curve = est.estimate(&grid, &spec).unwrap();
        for method in [VarianceMethod::Influence, VarianceMethod::Residual] {
            let ci = est.add_wald_ci(&curve, 0.95, method).unwrap();
            let iv = ci.intervals.as_ref().unwrap();
            for k in 0..ci.len() {
                assert!(iv.stderr[k] > 0.0);
                assert!(iv.lower[k] <= ci.estimates[k] && ci.estimates[k] <= iv.upper[k]);
                let z = (iv.upper[k] - ci.estimates[k]) / iv.stderr[k];
                assert!((z - 1.959964).abs() < 1e-5);
            }
        }
        assert!(CurveEstimator::new(&data, &fit, EstimatorKind::Reg)
            .add_wald_ci(&curve, 0.95, VarianceMethod::Influence)
            .is_err());
    }

    #[test]
    fn smoothed_target_reproduces_affine_truth() {
        let spec = KernelSpec::epanechnikov(1.5).unwrap();
        let v = smoothed_target(4.0, &spec, |t| 2.0 - 0.3 * t, |t| 0.1 + 0.02 * t, (0.0, 10.0)).unwrap();
        assert!((v - 0.8).abs() < 1e-12);
        // Near the boundary the window is clipped; affine functions are still exact.
        let v = smoothed_target(0.5, &spec, |t| 2.0 - 0.3 * t, |t| 0.1 + 0.02 * t, (0.0, 10.0)).unwrap();
        assert!((v - 1.85).abs() < 1e-12);
    }

    #[test]
    fn smoothed_target_even_truth_symmetric_design() {
        // theta even about a and varpi uniform: the slope vanishes and the
        // projection is the kernel-weighted mean of theta.
        let spec = KernelSpec::epanechnikov(1.0).unwrap();
        let a = 5.0;
        let theta = |t: f64| (t - a).powi(2);
        let v = smoothed_target(a, &spec, theta, |_| 0.1, (0.0, 10.0)).unwrap();
        assert!((v - 0.2).abs() < 1e-12, "{v}");
    }
}
