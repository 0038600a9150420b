//! Monte Carlo study harness: integrated absolute bias and RMSE of the
//! regression, IPW and doubly robust curves over the trimmed support.
//!
//! Both metrics are integrals over the trimmed support against the true
//! marginal treatment density (not renormalized), times 100.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{self, generate_data, TREATMENT_SCALE};
use super::truth::TruthOracle;
use crate::bandwidth::{oracle_bandwidth, select_bandwidth, BandwidthSearch};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{linspace, CurveEstimator, EstimatorKind};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::numeric::trapezoid;
use crate::nuisance::{
    default_floor, fit_outcome_regression, fit_treatment_density_beta, marginalize, Link, NuisanceFit,
};

/// Maximum tolerated fraction of failed replications.
pub const MAX_FAILURE_RATE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    Correct,
    Misspecified,
}

impl ModelSpec {
    pub fn is_correct(self) -> bool {
        self == Self::Correct
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    Loo,
    Oracle,
}

fn default_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::Reg, EstimatorKind::Ipw, EstimatorKind::Dr]
}

fn default_modes() -> Vec<BandwidthMode> {
    vec![BandwidthMode::Loo]
}

fn default_trim() -> f64 {
    0.10
}

fn default_grid_points() -> usize {
    101
}

/// The bandwidth range used in the simulation design, in treatment units.
pub fn simulation_search() -> BandwidthSearch {
    BandwidthSearch::new(0.01, 50.0).expect("valid range")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub treatment_model: ModelSpec,
    pub outcome_model: ModelSpec,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default = "default_modes")]
    pub bandwidth_modes: Vec<BandwidthMode>,
    /// Mass of the marginal treatment density excluded at each boundary.
    #[serde(default = "default_trim")]
    pub trim_fraction: f64,
    #[serde(default)]
    pub kernel: KernelFamily,
    #[serde(default = "simulation_search")]
    pub search: BandwidthSearch,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

impl SimConfig {
    pub fn new(n: usize, replications: usize, treatment_model: ModelSpec, outcome_model: ModelSpec) -> Self {
        Self {
            n,
            replications,
            base_seed: 0,
            treatment_model,
            outcome_model,
            estimators: default_estimators(),
            bandwidth_modes: default_modes(),
            trim_fraction: default_trim(),
            kernel: KernelFamily::default(),
            search: simulation_search(),
            grid_points: default_grid_points(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 50 {
            return Err(Error::InvalidInput(format!("n must be at least 50, got {}", self.n)));
        }
        if self.replications == 0 {
            return Err(Error::InvalidInput("at least one replication is required".into()));
        }
        if !(0.0..0.5).contains(&self.trim_fraction) {
            return Err(Error::InvalidInput(format!("trim fraction {} not in [0, 0.5)", self.trim_fraction)));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidInput("no estimators configured".into()));
        }
        if self.bandwidth_modes.is_empty() {
            return Err(Error::InvalidInput("no bandwidth modes configured".into()));
        }
        if self.grid_points < 2 {
            return Err(Error::InvalidInput("grid needs at least 2 points".into()));
        }
        self.search.validate()
    }

    /// Table column: which nuisance models are correct.
    pub fn correct_model_label(&self) -> &'static str {
        match (self.treatment_model.is_correct(), self.outcome_model.is_correct()) {
            (false, false) => "Neither",
            (true, false) => "Treatment",
            (false, true) => "Outcome",
            (true, true) => "Both",
        }
    }

    /// (estimator, mode) cells; the regression estimator has no bandwidth
    /// and appears once.
    pub fn cells(&self) -> Vec<(EstimatorKind, Option<BandwidthMode>)> {
        let mut out = Vec::new();
        for &kind in &self.estimators {
            if kind == EstimatorKind::Reg {
                out.push((kind, None));
            } else {
                out.extend(self.bandwidth_modes.iter().map(|&m| (kind, Some(m))));
            }
        }
        out.dedup();
        out
    }
}

/// Fits the configured nuisance models on a simulated dataset.
pub fn fit_simulation_nuisance(data: &Dataset, treatment: ModelSpec, outcome: ModelSpec) -> Result<NuisanceFit> {
    let density = fit_treatment_density_beta(
        data,
        &dgp::treatment_design(treatment.is_correct()),
        TREATMENT_SCALE,
        TREATMENT_SCALE,
    )?;
    let regression = fit_outcome_regression(data, &dgp::outcome_design(outcome.is_correct()), Link::Logistic)?;
    Ok(marginalize(data, Arc::new(density), Arc::new(regression), default_floor(data.support_length())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSummary {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl BandwidthSummary {
    fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: crate::numeric::quantile(&sorted, 0.5),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub estimator: EstimatorKind,
    pub bandwidth_mode: Option<BandwidthMode>,
    /// Table label, with an asterisk for oracle bandwidths.
    pub label: String,
    /// Integrated absolute mean bias, times 100.
    pub integrated_bias: f64,
    /// Integrated root mean squared error, times 100.
    pub integrated_rmse: f64,
    pub bias_mc_se: f64,
    pub rmse_mc_se: f64,
    pub bandwidth: Option<BandwidthSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: SimConfig,
    pub correct_model: String,
    pub trimmed_support: (f64, f64),
    pub completed: usize,
    pub failed: usize,
    pub cells: Vec<CellReport>,
}

impl SimulationReport {
    pub fn cell(&self, estimator: EstimatorKind, mode: Option<BandwidthMode>) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.estimator == estimator && c.bandwidth_mode == mode)
    }

    pub fn by_label(&self, label: &str) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.label == label)
    }

    /// Table-style CSV: one row per estimator.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("estimator,correct_model,bias,rmse,bias_mc_se,rmse_mc_se\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{:.4},{:.4},{:.4},{:.4}\n",
                c.label, self.correct_model, c.integrated_bias, c.integrated_rmse, c.bias_mc_se, c.rmse_mc_se
            ));
        }
        out
    }
}

fn cell_label(kind: EstimatorKind, mode: Option<BandwidthMode>) -> String {
    match mode {
        Some(BandwidthMode::Oracle) => format!("{}*", kind.label()),
        _ => kind.label().to_string(),
    }
}

/// Errors theta_hat - theta on the grid and the bandwidth, per cell.
struct Replication {
    errors: Vec<Vec<f64>>,
    bandwidths: Vec<Option<f64>>,
}

fn run_replication(
    config: &SimConfig,
    cells: &[(EstimatorKind, Option<BandwidthMode>)],
    grid: &[f64],
    truth_grid: &[f64],
    oracle: &TruthOracle,
    seed: u64,
) -> Result<Replication> {
    let data = generate_data(config.n, seed);
    let fit = fit_simulation_nuisance(&data, config.treatment_model, config.outcome_model)?;
    let truth = |a: f64| oracle.theta(a);
    let mut errors = Vec::with_capacity(cells.len());
    let mut bandwidths = Vec::with_capacity(cells.len());
    let mut estimators: Vec<(EstimatorKind, CurveEstimator)> = Vec::new();
    for &(kind, mode) in cells {
        if !estimators.iter().any(|(k, _)| *k == kind) {
            estimators.push((kind, CurveEstimator::new(&data, &fit, kind)));
        }
        let est = &estimators.iter().find(|(k, _)| *k == kind).expect("inserted above").1;
        let h = match (est.pseudo(), mode) {
            (None, _) => None,
            (Some(xi), mode) => {
                let search = match mode.unwrap_or(BandwidthMode::Loo) {
                    BandwidthMode::Loo => select_bandwidth(data.treatment(), &xi.values, config.kernel, &config.search),
                    BandwidthMode::Oracle => {
                        oracle_bandwidth(data.treatment(), &truth, &xi.values, config.kernel, &config.search)
                    }
                };
                Some(search.bandwidth().ok_or(Error::SingularDesign { center: f64::NAN })?)
            }
        };
        let spec = KernelSpec::new(config.kernel, h.unwrap_or(1.0))?;
        let curve = est.estimate(grid, &spec)?;
        if !curve.skipped.is_empty() {
            return Err(Error::SingularDesign { center: curve.skipped[0] });
        }
        errors.push(curve.estimates.iter().zip(truth_grid).map(|(e, t)| e - t).collect());
        bandwidths.push(h);
    }
    Ok(Replication { errors, bandwidths })
}

/// Runs the study with the shared truth oracle.
pub fn run_study(config: &SimConfig) -> Result<SimulationReport> {
    run_study_with(config, TruthOracle::shared(), &|_, _| {})
}

/// Runs the study; `progress(done, total)` is called as replications finish.
pub fn run_study_with(
    config: &SimConfig,
    oracle: &TruthOracle,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<SimulationReport> {
    config.validate()?;
    let cells = config.cells();
    let (lo, hi) = oracle.trimmed_support(config.trim_fraction);
    let grid = linspace(lo, hi, config.grid_points);
    let truth_grid: Vec<f64> = grid.iter().map(|&a| oracle.theta(a)).collect();
    let weights: Vec<f64> = grid.iter().map(|&a| oracle.varpi(a)).collect();

    let done = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<Result<Replication>> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let out = run_replication(config, &cells, &grid, &truth_grid, oracle, config.base_seed.wrapping_add(r as u64));
            let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
            progress(k, config.replications);
            out
        })
        .collect();

    let ok: Vec<&Replication> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    let failed = config.replications - ok.len();
    if failed as f64 >= MAX_FAILURE_RATE * config.replications as f64 && failed > 0 {
        return Err(Error::TooManyFailures { failed, total: config.replications });
    }
    let s = ok.len() as f64;
    let integrate = |vals: Vec<f64>| -> f64 {
        let y: Vec<f64> = vals.iter().zip(&weights).map(|(v, w)| v * w).collect();
        100.0 * trapezoid(&grid, &y)
    };

    let reports = cells
        .iter()
        .enumerate()
        .map(|(c, &(kind, mode))| {
            let mut abs_bias = Vec::with_capacity(grid.len());
            let mut rmse = Vec::with_capacity(grid.len());
            let mut bias_se = Vec::with_capacity(grid.len());
            let mut rmse_se = Vec::with_capacity(grid.len());
            for g in 0..grid.len() {
                let e: Vec<f64> = ok.iter().map(|r| r.errors[c][g]).collect();
                let mean = e.iter().sum::<f64>() / s;
                let mse = e.iter().map(|v| v * v).sum::<f64>() / s;
                let denom = (s - 1.0).max(1.0);
                let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / denom;
                let sq_var = e.iter().map(|v| (v * v - mse).powi(2)).sum::<f64>() / denom;
                abs_bias.push(mean.abs());
                rmse.push(mse.sqrt());
                bias_se.push((var / s).sqrt());
                rmse_se.push(if mse > 0.0 { (sq_var / s).sqrt() / (2.0 * mse.sqrt()) } else { 0.0 });
            }
            let hs: Vec<f64> = ok.iter().filter_map(|r| r.bandwidths[c]).collect();
            CellReport {
                estimator: kind,
                bandwidth_mode: mode,
                label: cell_label(kind, mode),
                integrated_bias: integrate(abs_bias),
                integrated_rmse: integrate(rmse),
                bias_mc_se: integrate(bias_se),
                rmse_mc_se: integrate(rmse_se),
                bandwidth: BandwidthSummary::from_values(&hs),
            }
        })
        .collect();

    Ok(SimulationReport {
        config: config.clone(),
        correct_model: config.correct_model_label().to_string(),
        trimmed_support: (lo, hi),
        completed: ok.len(),
        failed,
        cells: reports,
    })
}
