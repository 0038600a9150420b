//! Doubly robust pseudo-outcomes and influence-function values.

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, LocalFitBasis};
use crate::numeric::{compensated_mean, simpson_rule};
use crate::nuisance::NuisanceFit;

/// Default number of Simpson panels for the influence-function integral.
pub const DEFAULT_QUAD_PANELS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoOutcomes {
    pub values: Vec<f64>,
    /// Observations whose conditional density was raised to the floor.
    pub floored_count: usize,
}

/// (y - mu) / (pi / varpi) + m for one observation, arranged as
/// y r + (m - mu r) with r = varpi / pi so that it returns y exactly when
/// pi = varpi and mu = m.
pub fn pseudo_value(y: f64, pi: f64, mu: f64, varpi: f64, m: f64) -> f64 {
    let ratio = varpi / pi;
    y * ratio + (m - mu * ratio)
}

/// xi_i = (Y_i - mu(L_i, A_i)) / (pi(A_i | L_i) / varpi(A_i)) + m(A_i).
pub fn compute_pseudo(data: &Dataset, fit: &NuisanceFit) -> PseudoOutcomes {
    let same_rows = fit.training_rows() == data.covariates();
    let terms: Vec<(f64, bool)> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let l = data.covariates().row(i);
            let a = data.treatment()[i];
            // Same evaluation path as the marginalizations when possible.
            let (raw, mu) = if same_rows {
                (fit.raw_density_row(i, a), fit.outcome_row(i, a))
            } else {
                (fit.raw_density(l, a), fit.outcome_reg(l, a))
            };
            let floored = !(raw >= fit.floor());
            let pi = raw.max(fit.floor());
            let varpi = fit.marginal_density(a);
            let value = if fit.outcome_is_zero() {
                data.outcome()[i] * varpi / pi
            } else {
                pseudo_value(data.outcome()[i], pi, mu, varpi, fit.reg_curve(a))
            };
            (value, floored)
        })
        .collect();
    PseudoOutcomes {
        floored_count: terms.iter().filter(|t| t.1).count(),
        values: terms.into_iter().map(|t| t.0).collect(),
    }
}

/// Per-observation influence-function values at one center.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceValues {
    pub center: f64,
    pub values: Vec<[f64; 2]>,
    /// D = P_n{g K g'}.
    pub design: [[f64; 2]; 2],
}

impl InfluenceValues {
    /// (1,1) entry of P_n{phi phi'}.
    pub fn variance(&self) -> f64 {
        let sq: Vec<f64> = self.values.iter().map(|v| v[0] * v[0]).collect();
        compensated_mean(&sq)
    }

    pub fn mean(&self) -> [f64; 2] {
        let c0: Vec<f64> = self.values.iter().map(|v| v[0]).collect();
        let c1: Vec<f64> = self.values.iter().map(|v| v[1]).collect();
        [compensated_mean(&c0), compensated_mean(&c1)]
    }
}

/// phi_i = D^{-1}[ g(A_i) K(A_i) {xi_i - g(A_i)' beta}
///               + int g(t) K(t) {mu(L_i, t) - m(t)} varpi(t) dt ],
/// the integral by composite Simpson over the kernel window clipped to the
/// treatment support.
pub fn influence_values(
    data: &Dataset,
    fit: &NuisanceFit,
    pseudo: &PseudoOutcomes,
    a: f64,
    spec: &KernelSpec,
    beta: [f64; 2],
    quad_panels: usize,
) -> Result<InfluenceValues> {
    let n = data.len();
    let basis = LocalFitBasis::new(a, spec.bandwidth);
    let weights: Vec<f64> = data.treatment().iter().map(|&t| spec.weight(t, a)).collect();

    let moment = |f: &dyn Fn(usize) -> f64| compensated_mean(&(0..n).map(f).collect::<Vec<_>>());
    let s0 = moment(&|i| weights[i]);
    let s1 = moment(&|i| weights[i] * basis.at(data.treatment()[i])[1]);
    let s2 = moment(&|i| weights[i] * basis.at(data.treatment()[i])[1].powi(2));
    let det = s0 * s2 - s1 * s1;
    let scale = 0.5 * (s0 + s2);
    if !(s0 > 0.0) || !(det > crate::kernels::SINGULARITY_TOLERANCE * scale * scale) {
        return Err(Error::SingularDesign { center: a });
    }
    let inv = [[s2 / det, -s1 / det], [-s1 / det, s0 / det]];

    // Quadrature nodes carry g(t) K(t) varpi(t); m(t) is subtracted per node.
    let (lo, hi) = data.support();
    let (t_lo, t_hi) = ((a - spec.bandwidth).max(lo), (a + spec.bandwidth).min(hi));
    let nodes: Vec<(f64, [f64; 2], f64)> = if fit.outcome_is_zero() || t_hi <= t_lo {
        Vec::new()
    } else {
        let (ts, ws) = simpson_rule(t_lo, t_hi, quad_panels);
        let varpi = fit.marginal_density_many(&ts);
        let m = fit.reg_curve_many(&ts);
        ts.iter()
            .zip(&ws)
            .zip(varpi.iter().zip(&m))
            .filter_map(|((&t, &w), (&vp, &mt))| {
                let k = spec.weight(t, a);
                (k > 0.0).then(|| {
                    let g = basis.at(t);
                    let c = w * k * vp;
                    (t, [c * g[0], c * g[1]], mt)
                })
            })
            .collect()
    };

    let values = (0..n)
        .into_par_iter()
        .map(|i| {
            let t = data.treatment()[i];
            let g = basis.at(t);
            let resid = pseudo.values[i] - (g[0] * beta[0] + g[1] * beta[1]);
            let mut b = [g[0] * weights[i] * resid, g[1] * weights[i] * resid];
            for &(node, c, m) in &nodes {
                let diff = fit.outcome_row(i, node) - m;
                b[0] += c[0] * diff;
                b[1] += c[1] * diff;
            }
            [inv[0][0] * b[0] + inv[0][1] * b[1], inv[1][0] * b[0] + inv[1][1] * b[1]]
        })
        .collect();

    Ok(InfluenceValues { center: a, values, design: [[s0, s1], [s1, s2]] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Covariates;
    use crate::kernels::local_linear_fit;
    use crate::nuisance::{marginalize, FnDensity, FnRegression, ZeroRegression};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::sync::Arc;

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
            y.push(0.5 * l + 0.1 * t + rng.sample::<f64, _>(StandardNormal));
        }
        Dataset::new(Covariates::from_row_major(cov, n, 1).unwrap(), a, y, (0.0, 10.0)).unwrap()
    }

    fn normal_pdf(z: f64) -> f64 {
        (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    fn working_fit(data: &Dataset) -> NuisanceFit {
        marginalize(
            data,
            Arc::new(FnDensity(|l: &[f64], a: f64| normal_pdf(a - 5.0 - l[0]))),
            Arc::new(FnRegression(|l: &[f64], a: f64| 0.4 * l[0] + 0.12 * a)),
            1e-4,
        )
    }

    #[test]
    fn no_covariates_gives_raw_outcomes() {
        let n = 40;
        let data = Dataset::new(
            Covariates::empty(n),
            (0..n).map(|i| 0.1 + i as f64 * 0.2).collect(),
            (0..n).map(|i| (i as f64).sin()).collect(),
            (0.0, 10.0),
        )
        .unwrap();
        let fit = marginalize(
            &data,
            Arc::new(FnDensity(|_: &[f64], a: f64| 0.05 + 0.01 * a)),
            Arc::new(FnRegression(|_: &[f64], a: f64| a.cos())),
            1e-4,
        );
        let xi = compute_pseudo(&data, &fit);
        assert_eq!(xi.floored_count, 0);
        assert_eq!(xi.values, data.outcome());
    }

    #[test]
    fn ipw_reduction() {
        let data = instance(80, 1);
        let fit = working_fit(&data).without_outcome();
        let xi = compute_pseudo(&data, &fit);
        for i in 0..data.len() {
            let l = data.covariates().row(i);
            let a = data.treatment()[i];
            let expected = data.outcome()[i] * fit.marginal_density(a) / fit.cond_density(l, a);
            assert!((xi.values[i] - expected).abs() < 1e-12 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn floored_observations_are_counted() {
        let data = instance(50, 2);
        let fit = marginalize(
            &data,
            Arc::new(FnDensity(|_: &[f64], a: f64| if a < 5.0 { 0.0 } else { 0.2 })),
            Arc::new(ZeroRegression),
            0.01,
        );
        let xi = compute_pseudo(&data, &fit);
        let expected = data.treatment().iter().filter(|&&a| a < 5.0).count();
        assert_eq!(xi.floored_count, expected);
        assert!(xi.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn permutation_equivariance() {
        let data = instance(60, 3);
        let fit = working_fit(&data);
        let xi = compute_pseudo(&data, &fit);
        let perm: Vec<usize> = (0..60).rev().collect();
        let pdata = data.subset(&perm).unwrap();
        let pfit = working_fit(&pdata);
        let pxi = compute_pseudo(&pdata, &pfit);
        for (k, &i) in perm.iter().enumerate() {
            assert!((pxi.values[k] - xi.values[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn integral_term_vanishes_without_covariate_dependence() {
        let data = instance(60, 4);
        let fit = marginalize(
            &data,
            Arc::new(FnDensity(|l: &[f64], a: f64| normal_pdf(a - 5.0 - l[0]))),
            Arc::new(FnRegression(|_: &[f64], a: f64| 0.3 * a)),
            1e-4,
        );
        let xi = compute_pseudo(&data, &fit);
        let spec = KernelSpec::epanechnikov(1.5).unwrap();
        let beta = local_linear_fit(data.treatment(), &xi.values, 5.0, &spec).unwrap().as_array();
        let with = influence_values(&data, &fit, &xi, 5.0, &spec, beta, 200).unwrap();
        let without = influence_values(&data, &fit.without_outcome(), &xi, 5.0, &spec, beta, 200).unwrap();
        for (x, y) in with.values.iter().zip(&without.values) {
            assert!((x[0] - y[0]).abs() < 1e-13 && (x[1] - y[1]).abs() < 1e-13);
        }
    }

    #[test]
    fn influence_mean_is_zero_at_solution() {
        let data = instance(100, 5);
        let fit = working_fit(&data);
        let xi = compute_pseudo(&data, &fit);
        let spec = KernelSpec::epanechnikov(1.2).unwrap();
        for a in [3.5, 5.0, 6.5] {
            let beta = local_linear_fit(data.treatment(), &xi.values, a, &spec).unwrap().as_array();
            let phi = influence_values(&data, &fit, &xi, a, &spec, beta, 200).unwrap();
            let m = phi.mean();
            assert!(m[0].abs() < 1e-10 && m[1].abs() < 1e-10, "{m:?}");
            let k_mean = data.treatment().iter().map(|&t| spec.weight(t, a)).sum::<f64>() / 100.0;
            assert!((phi.design[0][0] - k_mean).abs() < 1e-12);
            assert_eq!(phi.design[0][1], phi.design[1][0]);
        }
    }

    #[test]
    fn quadrature_resolution_is_converged() {
        let data = instance(100, 6);
        let fit = marginalize(
            &data,
            Arc::new(FnDensity(|l: &[f64], a: f64| normal_pdf(a - 5.0 - l[0]))),
            Arc::new(FnRegression(|l: &[f64], a: f64| (0.4 * l[0] * a).sin() + 0.12 * a)),
            1e-4,
        );
        let xi = compute_pseudo(&data, &fit);
        let spec = KernelSpec::epanechnikov(1.5).unwrap();
        let beta = local_linear_fit(data.treatment(), &xi.values, 5.0, &spec).unwrap().as_array();
        let coarse = influence_values(&data, &fit, &xi, 5.0, &spec, beta, 200).unwrap();
        let fine = influence_values(&data, &fit, &xi, 5.0, &spec, beta, 2000).unwrap();
        for (c, f) in coarse.values.iter().zip(&fine.values) {
            assert!((c[0] - f[0]).abs() < 1e-6 && (c[1] - f[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn singular_center_is_reported() {
        let data = instance(30, 7);
        let fit = working_fit(&data);
        let xi = compute_pseudo(&data, &fit);
        let spec = KernelSpec::epanechnikov(0.01).unwrap();
        assert!(matches!(
            influence_values(&data, &fit, &xi, 9.9, &spec, [0.0, 0.0], 200),
            Err(Error::SingularDesign { .. })
        ));
    }
}
