//! Doubly robust estimation of continuous treatment effect curves.
//!
//! The pipeline fits nuisance models for the conditional treatment density and
//! the outcome regression, forms pseudo-outcomes, and regresses them on the
//! treatment with a local linear kernel smoother. Bandwidths are chosen by
//! leave-one-out cross-validation; pointwise Wald intervals use the estimated
//! influence function.

pub mod bandwidth;
pub mod data;
pub mod error;
pub mod estimator;
pub mod kernels;
pub mod numeric;
pub mod nuisance;
pub mod pseudo;
pub mod simulate;

pub use bandwidth::{loo_risk, oracle_bandwidth, oracle_risk, select_bandwidth, BandwidthSearch, Optimizer};
pub use data::{Covariates, Dataset};
pub use error::{Error, Result};
pub use estimator::{
    add_wald_ci, estimate_curve, CurveEstimator, EffectCurve, EstimatorKind, VarianceMethod, WaldIntervals,
};
pub use kernels::{kernel_moments, KernelFamily, KernelMoments, KernelSpec, LocalSmoother};
pub use nuisance::{marginalize, NuisanceFit};
pub use pseudo::{compute_pseudo, influence_values, pseudo_value, PseudoOutcomes};
