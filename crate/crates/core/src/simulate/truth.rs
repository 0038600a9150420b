//! Monte Carlo truth for the simulation design: the effect curve
//! theta(a) = E{mu(L, a)} and the marginal treatment density varpi(a).
//!
//! Both are averages over one fixed set of covariate draws, so they are smooth
//! in `a`. Tabulated values on a grid over the support are interpolated with a
//! natural cubic spline for fast repeated evaluation.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use super::dgp::{self, NUM_COVARIATES, SUPPORT, TREATMENT_SCALE};
use crate::numeric::{expit, trapezoid, CubicSpline};

pub const DEFAULT_DRAWS: usize = 1_000_000;
pub const DEFAULT_SEED: u64 = 0x5EED_CAFE;
pub const TABLE_POINTS: usize = 101;

/// A value with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

pub struct TruthOracle {
    covariates: Vec<[f64; NUM_COVARIATES]>,
    /// Per draw: intercept part and linear-in-a slope of the outcome predictor.
    outcome_parts: Vec<(f64, f64)>,
    /// Per draw: beta shapes and log beta function.
    shapes: Vec<(f64, f64, f64)>,
    knots: Vec<f64>,
    theta_table: CubicSpline,
    varpi_table: CubicSpline,
}

impl std::fmt::Debug for TruthOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TruthOracle").field("draws", &self.covariates.len()).finish()
    }
}

fn mc_summary(values: &[f64]) -> McEstimate {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    McEstimate { mean, stderr: (var / m).sqrt() }
}

impl TruthOracle {
    pub fn new(draws: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let covariates: Vec<[f64; NUM_COVARIATES]> =
            (0..draws).map(|_| std::array::from_fn(|_| rng.sample(StandardNormal))).collect();
        let outcome_parts = covariates
            .iter()
            .map(|l| {
                let [b0, b1, b2, b3, b4] = dgp::OUTCOME_BASE;
                (b0 + b1 * l[0] + b2 * l[1] + b3 * l[2] + b4 * l[3], 0.1 - 0.1 * l[0] + 0.1 * l[2])
            })
            .collect();
        let shapes = covariates
            .iter()
            .map(|l| {
                let p = dgp::treatment_mean(l);
                let q = TREATMENT_SCALE - p;
                (p, q, ln_gamma(p) + ln_gamma(q) - ln_gamma(p + q))
            })
            .collect();
        let mut oracle = Self {
            covariates,
            outcome_parts,
            shapes,
            knots: Vec::new(),
            theta_table: CubicSpline::new(vec![0.0, 1.0], vec![0.0, 0.0]),
            varpi_table: CubicSpline::new(vec![0.0, 1.0], vec![0.0, 0.0]),
        };
        let knots: Vec<f64> = (0..TABLE_POINTS)
            .map(|k| SUPPORT.0 + (SUPPORT.1 - SUPPORT.0) * k as f64 / (TABLE_POINTS - 1) as f64)
            .collect();
        let theta: Vec<f64> = knots.par_iter().map(|&a| oracle.theta_exact(a)).collect();
        let varpi: Vec<f64> = knots.par_iter().map(|&a| oracle.varpi_exact(a)).collect();
        oracle.theta_table = CubicSpline::new(knots.clone(), theta);
        oracle.varpi_table = CubicSpline::new(knots.clone(), varpi);
        oracle.knots = knots;
        oracle
    }

    /// Process-wide oracle with the default draw count and seed.
    pub fn shared() -> &'static TruthOracle {
        static ORACLE: OnceLock<TruthOracle> = OnceLock::new();
        ORACLE.get_or_init(|| TruthOracle::new(DEFAULT_DRAWS, DEFAULT_SEED))
    }

    pub fn draws(&self) -> usize {
        self.covariates.len()
    }

    pub fn covariate_draws(&self) -> &[[f64; NUM_COVARIATES]] {
        &self.covariates
    }

    fn mu_draw(&self, j: usize, a: f64) -> f64 {
        let (base, slope) = self.outcome_parts[j];
        expit(base + a * (slope + dgp::cubic_coefficient() * a * a))
    }

    fn pi_draw(&self, j: usize, a: f64) -> f64 {
        let x = a / TREATMENT_SCALE;
        if !(x > 0.0 && x < 1.0) {
            return 0.0;
        }
        let (p, q, ln_b) = self.shapes[j];
        ((p - 1.0) * x.ln() + (q - 1.0) * (-x).ln_1p() - ln_b).exp() / TREATMENT_SCALE
    }

    /// theta(a) averaged directly over the draws.
    pub fn theta_exact(&self, a: f64) -> f64 {
        (0..self.draws()).into_par_iter().map(|j| self.mu_draw(j, a)).sum::<f64>() / self.draws() as f64
    }

    /// theta(a) with its Monte Carlo standard error.
    pub fn theta_mc(&self, a: f64) -> McEstimate {
        let v: Vec<f64> = (0..self.draws()).into_par_iter().map(|j| self.mu_draw(j, a)).collect();
        mc_summary(&v)
    }

    pub fn varpi_exact(&self, a: f64) -> f64 {
        (0..self.draws()).into_par_iter().map(|j| self.pi_draw(j, a)).sum::<f64>() / self.draws() as f64
    }

    pub fn varpi_mc(&self, a: f64) -> McEstimate {
        let v: Vec<f64> = (0..self.draws()).into_par_iter().map(|j| self.pi_draw(j, a)).collect();
        mc_summary(&v)
    }

    /// Interpolated theta(a).
    pub fn theta(&self, a: f64) -> f64 {
        self.theta_table.eval(a)
    }

    /// Interpolated varpi(a); zero outside the support.
    pub fn varpi(&self, a: f64) -> f64 {
        if !(a > SUPPORT.0 && a < SUPPORT.1) {
            return 0.0;
        }
        self.varpi_table.eval(a).max(0.0)
    }

    pub fn table(&self) -> Vec<(f64, f64, f64)> {
        self.knots.iter().map(|&a| (a, self.theta(a), self.varpi(a))).collect()
    }

    /// Interval excluding `tail_mass` of the varpi mass at each boundary.
    pub fn trimmed_support(&self, tail_mass: f64) -> (f64, f64) {
        let xs: Vec<f64> = (0..=8000).map(|k| SUPPORT.0 + (SUPPORT.1 - SUPPORT.0) * k as f64 / 8000.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&a| self.varpi(a)).collect();
        let mut cdf = vec![0.0; xs.len()];
        for k in 1..xs.len() {
            cdf[k] = cdf[k - 1] + trapezoid(&xs[k - 1..=k], &ys[k - 1..=k]);
        }
        let total = cdf[cdf.len() - 1];
        let invert = |p: f64| {
            let target = p * total;
            let k = cdf.partition_point(|&c| c < target).clamp(1, cdf.len() - 1);
            let (c0, c1) = (cdf[k - 1], cdf[k]);
            let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.0 };
            xs[k - 1] + frac * (xs[k] - xs[k - 1])
        };
        (invert(tail_mass), invert(1.0 - tail_mass))
    }

    /// E[A] by quadrature of a varpi(a).
    pub fn mean_treatment(&self) -> f64 {
        crate::numeric::integrate(|a| a * self.varpi(a), SUPPORT.0, SUPPORT.1, 100, 10)
    }

    /// Monte Carlo expectation of f(L) over the oracle draws.
    pub fn expect<F: Fn(&[f64]) -> f64 + Sync>(&self, f: F) -> McEstimate {
        let v: Vec<f64> = self.covariates.par_iter().map(|l| f(l)).collect();
        mc_summary(&v)
    }
}
