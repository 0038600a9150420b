//! Nuisance functions: the conditional treatment density pi(a|l), the outcome
//! regression mu(l, a), and their empirical marginalizations
//! varpi(a) = P_n{pi(a|L)} and m(a) = P_n{mu(L, a)}.

pub mod density;
pub mod design;
pub mod glm;

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::data::{Covariates, Dataset};
use crate::error::Result;
use crate::numeric::compensated_mean;

pub use density::{
    fit_treatment_density_beta, fit_treatment_density_locscale, BetaTreatmentDensity, GridKde,
    LocationScaleDensity,
};
pub use design::{kang_schafer, CovariateExpr, FeatureMap, Term};
pub use glm::{fit_glm, GlmFit, Link};

/// Evaluation of a nuisance function at (training row, a).
pub trait RowEvaluator: Send + Sync {
    fn eval(&self, row: usize, a: f64) -> f64;

    /// All rows at one treatment value; `out` has one slot per row.
    fn eval_column(&self, a: f64, out: &mut [f64]) {
        for (row, v) in out.iter_mut().enumerate() {
            *v = self.eval(row, a);
        }
    }
}

pub trait ConditionalDensity: Send + Sync {
    /// pi(a | l).
    fn density(&self, l: &[f64], a: f64) -> f64;

    /// Optional per-row cache for repeated evaluation over `rows`.
    fn prepare(&self, _rows: &Covariates) -> Option<Arc<dyn RowEvaluator>> {
        None
    }
}

pub trait OutcomeRegression: Send + Sync {
    /// mu(l, a).
    fn predict(&self, l: &[f64], a: f64) -> f64;

    fn prepare(&self, _rows: &Covariates) -> Option<Arc<dyn RowEvaluator>> {
        None
    }

    /// True for the identically-zero regression.
    fn is_zero(&self) -> bool {
        false
    }
}

/// Closure-backed conditional density.
pub struct FnDensity<F>(pub F);

impl<F: Fn(&[f64], f64) -> f64 + Send + Sync> ConditionalDensity for FnDensity<F> {
    fn density(&self, l: &[f64], a: f64) -> f64 {
        (self.0)(l, a)
    }
}

/// Closure-backed outcome regression.
pub struct FnRegression<F>(pub F);

impl<F: Fn(&[f64], f64) -> f64 + Send + Sync> OutcomeRegression for FnRegression<F> {
    fn predict(&self, l: &[f64], a: f64) -> f64 {
        (self.0)(l, a)
    }
}

/// mu = 0; turns the doubly robust pseudo-outcome into the IPW one.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroRegression;

impl OutcomeRegression for ZeroRegression {
    fn predict(&self, _l: &[f64], _a: f64) -> f64 {
        0.0
    }

    fn is_zero(&self) -> bool {
        true
    }
}

/// A fitted GLM outcome regression mu(l, a) = link^{-1}(x(l, a)' beta).
#[derive(Debug, Clone)]
pub struct GlmOutcome {
    pub design: FeatureMap,
    pub coefficients: Vec<f64>,
    pub link: Link,
}

struct PolynomialRows {
    degree: usize,
    coefs: Vec<f64>,
    link: Link,
}

impl RowEvaluator for PolynomialRows {
    fn eval(&self, row: usize, a: f64) -> f64 {
        let poly = &self.coefs[row * (self.degree + 1)..(row + 1) * (self.degree + 1)];
        self.link.inverse(design::horner(poly, a))
    }
}

impl OutcomeRegression for GlmOutcome {
    fn predict(&self, l: &[f64], a: f64) -> f64 {
        self.link.inverse(self.design.linear_predictor(&self.coefficients, l, a))
    }

    fn prepare(&self, rows: &Covariates) -> Option<Arc<dyn RowEvaluator>> {
        let degree = self.design.max_a_power() as usize;
        let coefs = rows.rows().flat_map(|l| self.design.polynomial_in_a(&self.coefficients, l)).collect();
        Some(Arc::new(PolynomialRows { degree, coefs, link: self.link }))
    }
}

/// Fits mu(l, a) by logistic maximum likelihood or least squares on the
/// expanded design.
pub fn fit_outcome_regression(data: &Dataset, design: &FeatureMap, link: Link) -> Result<GlmOutcome> {
    design.validate(data.covariates().ncols())?;
    let k = design.len();
    let mut x = vec![0.0; data.len() * k];
    for (i, (l, &a)) in data.covariates().rows().zip(data.treatment()).enumerate() {
        design.eval_into(l, a, &mut x[i * k..(i + 1) * k]);
    }
    let fit = fit_glm(&x, k, data.outcome(), link)?;
    Ok(GlmOutcome { design: design.clone(), coefficients: fit.coefficients, link })
}

/// Default density floor: 1e-3 divided by the support length.
pub fn default_floor(support_length: f64) -> f64 {
    1e-3 / support_length
}

struct DensityRows {
    inner: Arc<dyn ConditionalDensity>,
    rows: Covariates,
}

impl RowEvaluator for DensityRows {
    fn eval(&self, row: usize, a: f64) -> f64 {
        self.inner.density(self.rows.row(row), a)
    }
}

struct RegressionRows {
    inner: Arc<dyn OutcomeRegression>,
    rows: Covariates,
}

impl RowEvaluator for RegressionRows {
    fn eval(&self, row: usize, a: f64) -> f64 {
        self.inner.predict(self.rows.row(row), a)
    }
}

/// The fitted nuisance quadruple (pi, mu, varpi, m).
///
/// The conditional density is floored; varpi and m are empirical averages
/// over the training covariate rows.
#[derive(Clone)]
pub struct NuisanceFit {
    rows: Covariates,
    density: Arc<dyn ConditionalDensity>,
    regression: Arc<dyn OutcomeRegression>,
    density_rows: Arc<dyn RowEvaluator>,
    regression_rows: Arc<dyn RowEvaluator>,
    floor: f64,
}

impl fmt::Debug for NuisanceFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NuisanceFit")
            .field("n", &self.rows.nrows())
            .field("p", &self.rows.ncols())
            .field("floor", &self.floor)
            .field("outcome_is_zero", &self.regression.is_zero())
            .finish()
    }
}

/// Bundles the evaluators and their marginalizations over the training rows.
pub fn marginalize(
    data: &Dataset,
    cond_density: Arc<dyn ConditionalDensity>,
    outcome_reg: Arc<dyn OutcomeRegression>,
    floor: f64,
) -> NuisanceFit {
    NuisanceFit::new(data.covariates().clone(), cond_density, outcome_reg, floor)
}

impl NuisanceFit {
    pub fn new(
        rows: Covariates,
        density: Arc<dyn ConditionalDensity>,
        regression: Arc<dyn OutcomeRegression>,
        floor: f64,
    ) -> Self {
        let density_rows = density
            .prepare(&rows)
            .unwrap_or_else(|| Arc::new(DensityRows { inner: density.clone(), rows: rows.clone() }));
        let regression_rows = regression
            .prepare(&rows)
            .unwrap_or_else(|| Arc::new(RegressionRows { inner: regression.clone(), rows: rows.clone() }));
        Self { rows, density, regression, density_rows, regression_rows, floor }
    }

    /// Same density, mu replaced by zero.
    pub fn without_outcome(&self) -> Self {
        Self {
            rows: self.rows.clone(),
            density: self.density.clone(),
            regression: Arc::new(ZeroRegression),
            regression_rows: Arc::new(RegressionRows { inner: Arc::new(ZeroRegression), rows: Covariates::empty(0) }),
            density_rows: self.density_rows.clone(),
            floor: self.floor,
        }
    }

    /// Same density, different outcome regression.
    pub fn with_outcome(&self, regression: Arc<dyn OutcomeRegression>) -> Self {
        Self::new(self.rows.clone(), self.density.clone(), regression, self.floor)
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn training_rows(&self) -> &Covariates {
        &self.rows
    }

    pub fn outcome_is_zero(&self) -> bool {
        self.regression.is_zero()
    }

    /// Unfloored pi(a | l).
    pub fn raw_density(&self, l: &[f64], a: f64) -> f64 {
        self.density.density(l, a)
    }

    /// Floored pi(a | l).
    pub fn cond_density(&self, l: &[f64], a: f64) -> f64 {
        self.raw_density(l, a).max(self.floor)
    }

    pub fn outcome_reg(&self, l: &[f64], a: f64) -> f64 {
        if self.regression.is_zero() {
            return 0.0;
        }
        self.regression.predict(l, a)
    }

    /// Unfloored pi(a | L_row) for a training row.
    pub fn raw_density_row(&self, row: usize, a: f64) -> f64 {
        self.density_rows.eval(row, a)
    }

    /// Floored pi(a | L_row) for a training row.
    pub fn cond_density_row(&self, row: usize, a: f64) -> f64 {
        self.raw_density_row(row, a).max(self.floor)
    }

    pub fn outcome_row(&self, row: usize, a: f64) -> f64 {
        if self.regression.is_zero() {
            return 0.0;
        }
        self.regression_rows.eval(row, a)
    }

    /// varpi(a) = P_n{pi(a | L)}.
    pub fn marginal_density(&self, a: f64) -> f64 {
        if self.rows.ncols() == 0 {
            // Every row is the same empty covariate vector.
            return self.cond_density_row(0, a);
        }
        let mut v = vec![0.0; self.rows.nrows()];
        self.density_rows.eval_column(a, &mut v);
        v.iter_mut().for_each(|p| *p = p.max(self.floor));
        compensated_mean(&v)
    }

    /// m(a) = P_n{mu(L, a)}.
    pub fn reg_curve(&self, a: f64) -> f64 {
        if self.regression.is_zero() {
            return 0.0;
        }
        if self.rows.ncols() == 0 {
            return self.outcome_row(0, a);
        }
        let mut v = vec![0.0; self.rows.nrows()];
        self.regression_rows.eval_column(a, &mut v);
        compensated_mean(&v)
    }

    /// varpi at many points, evaluated in parallel.
    pub fn marginal_density_many(&self, points: &[f64]) -> Vec<f64> {
        points.par_iter().map(|&a| self.marginal_density(a)).collect()
    }

    pub fn reg_curve_many(&self, points: &[f64]) -> Vec<f64> {
        if self.regression.is_zero() {
            return vec![0.0; points.len()];
        }
        points.par_iter().map(|&a| self.reg_curve(a)).collect()
    }
}
