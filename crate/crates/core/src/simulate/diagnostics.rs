//! Asymptotic bias and variance of the local linear estimator under the
//! simulation design, for comparison with Monte Carlo behaviour.

use super::dgp;
use super::truth::TruthOracle;
use crate::error::{Error, Result};
use crate::kernels::{kernel_moments, KernelFamily, KernelSpec};

/// Limits of the nuisance estimators; `None` means the true function.
#[derive(Default, Clone, Copy)]
pub struct NuisanceLimits<'a> {
    pub density: Option<&'a (dyn Fn(&[f64], f64) -> f64 + Sync)>,
    pub regression: Option<&'a (dyn Fn(&[f64], f64) -> f64 + Sync)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem3 {
    pub center: f64,
    pub bandwidth: f64,
    /// Second derivative of the true curve.
    pub theta_second: f64,
    /// Leading bias term b_h(a).
    pub bias: f64,
    /// sigma^2(a).
    pub sigma2: f64,
    /// True marginal density at a.
    pub varpi: f64,
    /// Asymptotic variance of sqrt(nh) (theta_hat - theta - b_h).
    pub scaled_variance: f64,
}

impl Theorem3 {
    /// Approximate standard deviation of the estimate at sample size n.
    pub fn stddev(&self, n: usize) -> f64 {
        (self.scaled_variance / (n as f64 * self.bandwidth)).sqrt()
    }
}

/// Central second difference of the true curve.
pub fn theta_second_derivative(oracle: &TruthOracle, a: f64, step: f64) -> f64 {
    (oracle.theta_exact(a + step) - 2.0 * oracle.theta_exact(a) + oracle.theta_exact(a - step)) / (step * step)
}

pub fn theorem3_diagnostics(
    a: f64,
    h: f64,
    family: KernelFamily,
    oracle: &TruthOracle,
    limits: NuisanceLimits<'_>,
) -> Result<Theorem3> {
    if !(a > dgp::SUPPORT.0 && a < dgp::SUPPORT.1) {
        return Err(Error::DomainError(format!("center {a} outside the treatment support")));
    }
    let moments = kernel_moments(&KernelSpec::new(family, h)?);
    let step = 0.05f64.min(0.5 * (a - dgp::SUPPORT.0)).min(0.5 * (dgp::SUPPORT.1 - a));
    let theta_second = theta_second_derivative(oracle, a, step);
    let bias = theta_second * h * h / 2.0 * moments.nu2;

    let theta = oracle.theta_exact(a);
    let varpi = oracle.varpi_exact(a);
    let pi_bar = |l: &[f64]| limits.density.map_or_else(|| dgp::treatment_density(a, l), |f| f(l, a));
    let mu_bar = |l: &[f64]| limits.regression.map_or_else(|| dgp::outcome_mean(l, a), |f| f(l, a));
    let varpi_bar = oracle.expect(|l| pi_bar(l)).mean;
    let m_bar = oracle.expect(|l| mu_bar(l)).mean;
    if !(varpi_bar > 0.0 && varpi > 0.0) {
        return Err(Error::DomainError(format!("zero marginal density at {a}")));
    }
    let first = oracle
        .expect(|l| {
            let mu = dgp::outcome_mean(l, a);
            let tau2 = mu * (1.0 - mu);
            let ratio_bar = pi_bar(l) / varpi_bar;
            let ratio = dgp::treatment_density(a, l) / varpi;
            (tau2 + (mu - mu_bar(l)).powi(2)) * ratio / (ratio_bar * ratio_bar)
        })
        .mean;
    let sigma2 = first - (theta - m_bar).powi(2);
    Ok(Theorem3 {
        center: a,
        bandwidth: h,
        theta_second,
        bias,
        sigma2,
        varpi,
        scaled_variance: sigma2 * moments.roughness / varpi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bias_scales_with_squared_bandwidth() {
        let o = TruthOracle::new(20_000, 11);
        let none = NuisanceLimits::default();
        let small = theorem3_diagnostics(8.0, 0.1, KernelFamily::Epanechnikov, &o, none).unwrap();
        let double = theorem3_diagnostics(8.0, 0.2, KernelFamily::Epanechnikov, &o, none).unwrap();
        assert!((double.bias / small.bias / 4.0 - 1.0).abs() < 0.05);
        assert_eq!(small.sigma2, double.sigma2);
    }

    #[test]
    fn correct_limits_leave_conditional_variance_only() {
        let o = TruthOracle::new(20_000, 12);
        let d = theorem3_diagnostics(8.0, 1.0, KernelFamily::Epanechnikov, &o, NuisanceLimits::default()).unwrap();
        let varpi = o.varpi_exact(8.0);
        let direct = o
            .expect(|l| {
                let mu = dgp::outcome_mean(l, 8.0);
                mu * (1.0 - mu) * varpi / dgp::treatment_density(8.0, l)
            })
            .mean;
        assert!((d.sigma2 - direct).abs() < 1e-9 * direct);
        assert!(d.sigma2 > 0.0);
    }

    #[test]
    fn wrong_regression_limit_inflates_variance_and_centering() {
        let o = TruthOracle::new(20_000, 13);
        let half = |_: &[f64], _: f64| 0.5;
        let limits = NuisanceLimits { regression: Some(&half), ..Default::default() };
        let wrong = theorem3_diagnostics(8.0, 1.0, KernelFamily::Epanechnikov, &o, limits).unwrap();
        let right = theorem3_diagnostics(8.0, 1.0, KernelFamily::Epanechnikov, &o, NuisanceLimits::default()).unwrap();
        assert!(wrong.sigma2 > right.sigma2);
    }

    #[test]
    fn rejects_points_outside_support() {
        let o = TruthOracle::new(1_000, 14);
        assert!(theorem3_diagnostics(0.0, 1.0, KernelFamily::Uniform, &o, NuisanceLimits::default()).is_err());
    }
}
