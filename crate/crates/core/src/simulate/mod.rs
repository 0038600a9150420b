//! Simulation design, truth oracle, study harness and asymptotic diagnostics.

pub mod diagnostics;
pub mod dgp;
pub mod study;
pub mod truth;

pub use diagnostics::{theorem3_diagnostics, NuisanceLimits, Theorem3};
pub use dgp::{generate_data, misspecify_covariates};
pub use study::{
    fit_simulation_nuisance, run_study, run_study_with, BandwidthMode, CellReport, ModelSpec, SimConfig,
    SimulationReport,
};
pub use truth::{McEstimate, TruthOracle};
