//! Conditional treatment density models.

use std::sync::Arc;

use statrs::function::gamma::ln_gamma;

use super::design::FeatureMap;
use super::glm::{fit_glm, Link};
use super::{ConditionalDensity, RowEvaluator};
use crate::data::{Covariates, Dataset};
use crate::error::{Error, Result};
use crate::numeric::{expit, quantile};

/// Smallest admissible location-scale spread.
pub const MIN_SCALE: f64 = 1e-8;

fn design_matrix(design: &FeatureMap, rows: &Covariates) -> Vec<f64> {
    let k = design.len();
    let mut x = vec![0.0; rows.nrows() * k];
    for (i, l) in rows.rows().enumerate() {
        design.eval_into(l, 0.0, &mut x[i * k..(i + 1) * k]);
    }
    x
}

fn linear_predictions(design: &FeatureMap, coef: &[f64], rows: &Covariates) -> Vec<f64> {
    rows.rows().map(|l| design.linear_predictor(coef, l, 0.0)).collect()
}

fn require_covariate_only(design: &FeatureMap, what: &str) -> Result<()> {
    if design.depends_on_treatment() {
        return Err(Error::InvalidInput(format!("{what} design may not contain treatment terms")));
    }
    Ok(())
}

/// `A / scale ~ Beta(precision * rho(l), precision * (1 - rho(l)))` with
/// `rho(l) = expit(x(l)' gamma)`, so `E[A | l] = scale * rho(l)`.
#[derive(Debug, Clone)]
pub struct BetaTreatmentDensity {
    pub mean_design: FeatureMap,
    pub coefficients: Vec<f64>,
    pub scale: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, Copy)]
struct BetaShape {
    alpha: f64,
    beta: f64,
    ln_beta_fn: f64,
}

impl BetaShape {
    fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta, ln_beta_fn: ln_gamma(alpha) + ln_gamma(beta) - ln_gamma(alpha + beta) }
    }

    fn pdf(&self, x: f64) -> f64 {
        if !(x > 0.0 && x < 1.0) {
            return 0.0;
        }
        ((self.alpha - 1.0) * x.ln() + (self.beta - 1.0) * (-x).ln_1p() - self.ln_beta_fn).exp()
    }
}

impl BetaTreatmentDensity {
    pub fn new(mean_design: FeatureMap, coefficients: Vec<f64>, scale: f64, precision: f64) -> Self {
        Self { mean_design, coefficients, scale, precision }
    }

    /// Conditional mean E[A | l].
    pub fn mean(&self, l: &[f64]) -> f64 {
        self.scale * expit(self.mean_design.linear_predictor(&self.coefficients, l, 0.0))
    }

    fn shape(&self, l: &[f64]) -> BetaShape {
        let rho = expit(self.mean_design.linear_predictor(&self.coefficients, l, 0.0));
        BetaShape::new(self.precision * rho, self.precision * (1.0 - rho))
    }
}

struct BetaRows {
    shapes: Vec<BetaShape>,
    scale: f64,
}

impl RowEvaluator for BetaRows {
    fn eval(&self, row: usize, a: f64) -> f64 {
        self.shapes[row].pdf(a / self.scale) / self.scale
    }

    fn eval_column(&self, a: f64, out: &mut [f64]) {
        let x = a / self.scale;
        if !(x > 0.0 && x < 1.0) {
            out.fill(0.0);
            return;
        }
        let (lx, l1x) = (x.ln(), (-x).ln_1p());
        for (v, s) in out.iter_mut().zip(&self.shapes) {
            *v = ((s.alpha - 1.0) * lx + (s.beta - 1.0) * l1x - s.ln_beta_fn).exp() / self.scale;
        }
    }
}

impl ConditionalDensity for BetaTreatmentDensity {
    fn density(&self, l: &[f64], a: f64) -> f64 {
        self.shape(l).pdf(a / self.scale) / self.scale
    }

    fn prepare(&self, rows: &Covariates) -> Option<Arc<dyn RowEvaluator>> {
        Some(Arc::new(BetaRows { shapes: rows.rows().map(|l| self.shape(l)).collect(), scale: self.scale }))
    }
}

/// Fits the beta treatment model by Bernoulli quasi-likelihood on `A / scale`.
pub fn fit_treatment_density_beta(
    data: &Dataset,
    mean_design: &FeatureMap,
    scale: f64,
    total: f64,
) -> Result<BetaTreatmentDensity> {
    if !(scale > 0.0 && total > 0.0) {
        return Err(Error::InvalidInput("beta scale and precision must be positive".into()));
    }
    mean_design.validate(data.covariates().ncols())?;
    require_covariate_only(mean_design, "treatment mean")?;
    if let Some((i, a)) = data.treatment().iter().enumerate().find(|(_, &a)| !(a > 0.0 && a < scale)) {
        return Err(Error::DomainError(format!("treatment {a} at row {i} outside (0, {scale})")));
    }
    let y: Vec<f64> = data.treatment().iter().map(|a| a / scale).collect();
    let x = design_matrix(mean_design, data.covariates());
    let fit = fit_glm(&x, mean_design.len(), &y, Link::Logistic)?;
    Ok(BetaTreatmentDensity::new(mean_design.clone(), fit.coefficients, scale, total))
}

/// Gaussian kernel density estimate tabulated on a fine grid and linearly
/// interpolated; zero outside the grid.
#[derive(Debug, Clone)]
pub struct GridKde {
    lo: f64,
    step: f64,
    values: Vec<f64>,
    bandwidth: f64,
}

const KDE_GRID_POINTS: usize = 4096;

impl GridKde {
    /// Silverman's rule: 0.9 min(sd, IQR/1.34) n^{-1/5}.
    pub fn silverman_bandwidth(sample: &[f64]) -> f64 {
        let n = sample.len() as f64;
        let mean = sample.iter().sum::<f64>() / n;
        let sd = (sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let mut sorted = sample.to_vec();
        sorted.sort_by(f64::total_cmp);
        let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
        let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
        0.9 * spread * n.powf(-0.2)
    }

    pub fn new(sample: &[f64], bandwidth: f64) -> Result<Self> {
        if sample.is_empty() || !(bandwidth > 0.0) {
            return Err(Error::InvalidInput("kernel density needs data and a positive bandwidth".into()));
        }
        let mut sorted = sample.to_vec();
        sorted.sort_by(f64::total_cmp);
        let lo = sorted[0] - 6.0 * bandwidth;
        let hi = sorted[sorted.len() - 1] + 6.0 * bandwidth;
        let step = (hi - lo) / (KDE_GRID_POINTS - 1) as f64;
        let norm = 1.0 / (sorted.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
        let reach = 8.0 * bandwidth;
        let values = (0..KDE_GRID_POINTS)
            .map(|g| {
                let x = lo + step * g as f64;
                let start = sorted.partition_point(|&s| s < x - reach);
                let sum: f64 = sorted[start..]
                    .iter()
                    .take_while(|&&s| s <= x + reach)
                    .map(|s| (-0.5 * ((x - s) / bandwidth).powi(2)).exp())
                    .sum();
                sum * norm
            })
            .collect();
        Ok(Self { lo, step, values, bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn eval(&self, x: f64) -> f64 {
        let pos = (x - self.lo) / self.step;
        if !(pos >= 0.0) || pos >= (self.values.len() - 1) as f64 {
            return 0.0;
        }
        let i = pos as usize;
        let frac = pos - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }
}

/// `A = lambda(L) + gamma(L) eps` with a kernel estimate of the density of eps.
#[derive(Debug, Clone)]
pub struct LocationScaleDensity {
    mean_design: FeatureMap,
    mean_coef: Vec<f64>,
    scale_design: FeatureMap,
    scale_coef: Vec<f64>,
    /// Centering and spread of the raw standardized residuals.
    shift: f64,
    spread: f64,
    residual_density: GridKde,
    standardized: Vec<f64>,
}

impl LocationScaleDensity {
    fn raw_scale(&self, l: &[f64]) -> f64 {
        (0.5 * self.scale_design.linear_predictor(&self.scale_coef, l, 0.0)).exp()
    }

    /// (location, scale) of A given l.
    pub fn location_scale(&self, l: &[f64]) -> (f64, f64) {
        let raw = self.raw_scale(l);
        let location = self.mean_design.linear_predictor(&self.mean_coef, l, 0.0) + self.shift * raw;
        (location, self.spread * raw)
    }

    /// Standardized training residuals (mean 0, unit variance).
    pub fn standardized_residuals(&self) -> &[f64] {
        &self.standardized
    }

    pub fn residual_density(&self) -> &GridKde {
        &self.residual_density
    }
}

struct LocScaleRows {
    params: Vec<(f64, f64)>,
    residual_density: GridKde,
}

impl RowEvaluator for LocScaleRows {
    fn eval(&self, row: usize, a: f64) -> f64 {
        let (loc, scale) = self.params[row];
        self.residual_density.eval((a - loc) / scale) / scale
    }
}

impl ConditionalDensity for LocationScaleDensity {
    fn density(&self, l: &[f64], a: f64) -> f64 {
        let (loc, scale) = self.location_scale(l);
        self.residual_density.eval((a - loc) / scale) / scale
    }

    fn prepare(&self, rows: &Covariates) -> Option<Arc<dyn RowEvaluator>> {
        Some(Arc::new(LocScaleRows {
            params: rows.rows().map(|l| self.location_scale(l)).collect(),
            residual_density: self.residual_density.clone(),
        }))
    }
}

/// Fits the location-scale treatment model: least squares for the mean,
/// log-squared-residual regression for the scale, and a Silverman-bandwidth
/// Gaussian kernel density for the standardized residuals.
pub fn fit_treatment_density_locscale(
    data: &Dataset,
    mean_design: &FeatureMap,
    scale_design: &FeatureMap,
) -> Result<LocationScaleDensity> {
    let n = data.len();
    if n < 20 {
        return Err(Error::InvalidInput(format!("location-scale model needs n >= 20, got {n}")));
    }
    let p = data.covariates().ncols();
    mean_design.validate(p)?;
    scale_design.validate(p)?;
    require_covariate_only(mean_design, "treatment mean")?;
    require_covariate_only(scale_design, "treatment scale")?;
    let rows = data.covariates();

    let xm = design_matrix(mean_design, rows);
    let mean_coef = fit_glm(&xm, mean_design.len(), data.treatment(), Link::Identity)?.coefficients;
    let fitted = linear_predictions(mean_design, &mean_coef, rows);
    let resid: Vec<f64> = data.treatment().iter().zip(&fitted).map(|(a, m)| a - m).collect();

    let mean_sq = resid.iter().map(|r| r * r).sum::<f64>() / n as f64;
    if !(mean_sq > 0.0) {
        return Err(Error::DegenerateScale { value: 0.0 });
    }
    let log_sq: Vec<f64> = resid.iter().map(|r| (r * r).max(1e-12 * mean_sq).ln()).collect();
    let xs = design_matrix(scale_design, rows);
    let scale_coef = fit_glm(&xs, scale_design.len(), &log_sq, Link::Identity)?.coefficients;
    let raw_scales: Vec<f64> = rows
        .rows()
        .map(|l| (0.5 * scale_design.linear_predictor(&scale_coef, l, 0.0)).exp())
        .collect();

    let raw_eps: Vec<f64> = resid.iter().zip(&raw_scales).map(|(r, s)| r / s).collect();
    let shift = raw_eps.iter().sum::<f64>() / n as f64;
    let spread = (raw_eps.iter().map(|e| (e - shift).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    if let Some(&s) = raw_scales.iter().find(|&&s| !(spread * s >= MIN_SCALE)) {
        return Err(Error::DegenerateScale { value: spread * s });
    }
    let standardized: Vec<f64> = raw_eps.iter().map(|e| (e - shift) / spread).collect();
    let residual_density = GridKde::new(&standardized, GridKde::silverman_bandwidth(&standardized))?;

    Ok(LocationScaleDensity {
        mean_design: mean_design.clone(),
        mean_coef,
        scale_design: scale_design.clone(),
        scale_coef,
        shift,
        spread,
        residual_density,
        standardized,
    })
}
