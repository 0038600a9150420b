//! JSON run configuration. Every section is optional; command-line flags
//! override the corresponding fields.

use std::path::Path;

use drcurve::estimator::{quantile_grid, EstimatorKind, VarianceMethod};
use drcurve::kernels::KernelFamily;
use drcurve::nuisance::{FeatureMap, Link};
use drcurve::simulate::{BandwidthMode, ModelSpec, SimConfig};
use drcurve::BandwidthSearch;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub estimate: EstimateConfig,
    #[serde(default)]
    pub simulation: Option<SimConfig>,
    #[serde(default)]
    pub export: ExportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            seed: None,
            estimate: EstimateConfig::default(),
            simulation: None,
            export: ExportConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("invalid config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema != SCHEMA_VERSION {
            return Err(CliError::Input(format!(
                "unsupported config schema {} (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        self.estimate.validate()?;
        if let Some(sim) = &self.simulation {
            sim.validate().map_err(|e| CliError::Input(format!("simulation section: {e}")))?;
        }
        Ok(())
    }
}

/// `"loo"`, `"oracle"` or a fixed positive bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthChoice {
    Fixed(f64),
    Select(BandwidthMode),
}

impl Default for BandwidthChoice {
    fn default() -> Self {
        Self::Select(BandwidthMode::Loo)
    }
}

impl std::str::FromStr for BandwidthChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loo" => Ok(Self::Select(BandwidthMode::Loo)),
            "oracle" => Ok(Self::Select(BandwidthMode::Oracle)),
            _ => match s.parse::<f64>() {
                Ok(h) if h > 0.0 && h.is_finite() => Ok(Self::Fixed(h)),
                _ => Err(format!("expected loo, oracle or a positive number, got '{s}'")),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub points: usize,
    pub lower_quantile: f64,
    pub upper_quantile: f64,
    /// Explicit grid; overrides the quantile range.
    pub values: Option<Vec<f64>>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { points: 101, lower_quantile: 0.05, upper_quantile: 0.95, values: None }
    }
}

impl GridSpec {
    pub fn resolve(&self, treatments: &[f64]) -> Vec<f64> {
        match &self.values {
            Some(v) => v.clone(),
            None => quantile_grid(treatments, self.lower_quantile, self.upper_quantile, self.points),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum TreatmentModel {
    /// A = lambda(L) + gamma(L) eps with a kernel density for eps; both
    /// designs default to (1, l1, ..., lp).
    LocationScale { mean: Option<FeatureMap>, scale: Option<FeatureMap> },
    /// A / scale ~ Beta with a logistic mean model and fixed precision.
    Beta { mean: Option<FeatureMap>, scale: f64, precision: f64 },
    /// The beta model of the simulation design, correct or misspecified.
    Simulation { model: ModelSpec },
}

impl Default for TreatmentModel {
    fn default() -> Self {
        Self::LocationScale { mean: None, scale: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutcomeModel {
    /// Defaults to (1, l, a, a^2, a l).
    pub design: Option<FeatureMap>,
    /// Defaults to logistic for 0/1 outcomes, identity otherwise.
    pub link: Option<Link>,
    /// The outcome model of the simulation design; excludes `design`.
    pub simulation: Option<ModelSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub kind: EstimatorKind,
    pub kernel: KernelFamily,
    pub bandwidth: BandwidthChoice,
    /// Bandwidth search range; defaults to [0.05 sd(A), 5 range(A)].
    pub search: Option<BandwidthSearch>,
    pub grid: GridSpec,
    /// Wald interval level; `null` disables intervals.
    pub ci_level: Option<f64>,
    pub variance: VarianceMethod,
    /// Treatment support; defaults to the observed range.
    pub support: Option<(f64, f64)>,
    /// Density floor; defaults to 1e-3 / support length.
    pub floor: Option<f64>,
    pub treatment_model: TreatmentModel,
    pub outcome_model: OutcomeModel,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::Dr,
            kernel: KernelFamily::default(),
            bandwidth: BandwidthChoice::default(),
            search: None,
            grid: GridSpec::default(),
            ci_level: Some(0.95),
            variance: VarianceMethod::default(),
            support: None,
            floor: None,
            treatment_model: TreatmentModel::default(),
            outcome_model: OutcomeModel::default(),
        }
    }
}

impl EstimateConfig {
    fn validate(&self) -> Result<(), CliError> {
        if let BandwidthChoice::Fixed(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(CliError::Input(format!("bandwidth must be positive, got {h}")));
            }
        }
        if let Some(search) = &self.search {
            search.validate().map_err(|e| CliError::Input(e.to_string()))?;
        }
        if let Some(level) = self.ci_level {
            if !(level > 0.0 && level < 1.0) {
                return Err(CliError::Input(format!("ci_level {level} not in (0, 1)")));
            }
        }
        let g = &self.grid;
        if g.values.as_ref().map_or(g.points == 0, |v| v.is_empty()) {
            return Err(CliError::Input("grid is empty".into()));
        }
        if !(0.0 <= g.lower_quantile && g.lower_quantile <= g.upper_quantile && g.upper_quantile <= 1.0) {
            return Err(CliError::Input("grid quantiles must satisfy 0 <= lower <= upper <= 1".into()));
        }
        if let Some((lo, hi)) = self.support {
            if !(lo < hi) {
                return Err(CliError::Input(format!("invalid support [{lo}, {hi}]")));
            }
        }
        if self.floor.is_some_and(|f| !(f > 0.0)) {
            return Err(CliError::Input("floor must be positive".into()));
        }
        if self.outcome_model.simulation.is_some() && self.outcome_model.design.is_some() {
            return Err(CliError::Input("outcome_model: give either `design` or `simulation`, not both".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportConfig {
    /// Sample size of an exported simulation dataset.
    pub n: usize,
    /// Points of an exported truth table.
    pub truth_points: usize,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self { n: 1000, truth_points: 101 }
    }
}
