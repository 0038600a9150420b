//! Bandwidth selection: leave-one-out cross-validation on the pseudo-outcome
//! regression and the oracle-risk selector used in simulations.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::EstimatorKind;
use crate::kernels::{KernelFamily, KernelSpec, LocalSmoother, MomentIndex};
use crate::nuisance::NuisanceFit;
use crate::pseudo::compute_pseudo;

/// Golden ratio conjugate.
const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Log-grid scan to bracket the minimum, then golden-section on log h.
    #[default]
    GoldenSection,
    /// Log-grid scan only.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSearch {
    pub h_min: f64,
    pub h_max: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_at_selected: Option<f64>,
}

fn default_grid_size() -> usize {
    20
}

impl BandwidthSearch {
    pub fn new(h_min: f64, h_max: f64) -> Result<Self> {
        if !(h_min > 0.0 && h_min.is_finite() && h_max.is_finite() && h_min <= h_max) {
            return Err(Error::InvalidInput(format!("invalid bandwidth range [{h_min}, {h_max}]")));
        }
        Ok(Self {
            h_min,
            h_max,
            optimizer: Optimizer::GoldenSection,
            grid_size: default_grid_size(),
            selected: None,
            risk_at_selected: None,
        })
    }

    /// [0.05 sd(A), 5 range(A)].
    pub fn default_for(treatments: &[f64]) -> Result<Self> {
        let n = treatments.len() as f64;
        let mean = treatments.iter().sum::<f64>() / n;
        let sd = (treatments.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let lo = treatments.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = treatments.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(0.05 * sd, 5.0 * (hi - lo))
    }

    pub fn with_optimizer(mut self, optimizer: Optimizer, grid_size: usize) -> Self {
        self.optimizer = optimizer;
        self.grid_size = grid_size.max(2);
        self
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.h_min, self.h_max).map(|_| ())
    }

    /// Log-spaced scan grid including both endpoints.
    pub fn scan_grid(&self) -> Vec<f64> {
        log_grid(self.h_min, self.h_max, self.grid_size.max(2))
    }

    /// Selected bandwidth, when one with finite risk was found.
    pub fn bandwidth(&self) -> Option<f64> {
        match (self.selected, self.risk_at_selected) {
            (Some(h), Some(r)) if r.is_finite() => Some(h),
            _ => None,
        }
    }
}

pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points < 2 || lo == hi {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|k| match k {
            0 => lo,
            k if k == points - 1 => hi,
            k => (a + (b - a) * k as f64 / (points - 1) as f64).exp(),
        })
        .collect()
}

/// Minimizes `risk` over the search range; infinite risk marks infeasible h.
pub fn minimize<F>(search: &BandwidthSearch, risk: F) -> BandwidthSearch
where
    F: Fn(f64) -> f64 + Sync,
{
    let mut out = search.clone();
    if search.h_min == search.h_max {
        out.selected = Some(search.h_min);
        out.risk_at_selected = Some(risk(search.h_min));
        return out;
    }
    let grid = search.scan_grid();
    let risks: Vec<f64> = grid.par_iter().map(|&h| risk(h)).collect();
    let (best, _) = risks
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, br), (i, &r)| if r < br { (i, r) } else { (bi, br) });
    let (mut h_best, mut r_best) = (grid[best], risks[best]);

    if search.optimizer == Optimizer::GoldenSection && r_best.is_finite() {
        let mut lo = grid[best.saturating_sub(1)].ln();
        let mut hi = grid[(best + 1).min(grid.len() - 1)].ln();
        let mut x1 = hi - INV_PHI * (hi - lo);
        let mut x2 = lo + INV_PHI * (hi - lo);
        let mut f1 = risk(x1.exp());
        let mut f2 = risk(x2.exp());
        while hi - lo > 1e-6 {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - INV_PHI * (hi - lo);
                f1 = risk(x1.exp());
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + INV_PHI * (hi - lo);
                f2 = risk(x2.exp());
            }
        }
        let (x, f) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
        if f < r_best {
            h_best = x.exp().clamp(search.h_min, search.h_max);
            r_best = f;
        }
    }
    out.selected = Some(h_best);
    out.risk_at_selected = Some(r_best);
    out
}

/// Local fits at the observed treatments, through the block index when the
/// kernel allows it.
struct Fitter<'a> {
    treatments: &'a [f64],
    pseudo: &'a [f64],
    family: KernelFamily,
    index: Option<MomentIndex>,
    smoother: LocalSmoother,
}

impl<'a> Fitter<'a> {
    fn new(treatments: &'a [f64], pseudo: &'a [f64], family: KernelFamily) -> Self {
        let spec = KernelSpec { family, bandwidth: 1.0 };
        Self {
            treatments,
            pseudo,
            family,
            index: MomentIndex::new(treatments, pseudo, family),
            smoother: LocalSmoother::new(treatments, &spec),
        }
    }

    /// (fit, hat) at every observation, or `None` if any design is singular.
    fn fits(&self, h: f64) -> Option<Vec<(f64, f64)>> {
        if !(h.is_finite() && h > 0.0) {
            return None;
        }
        let smoother = self.smoother.with_bandwidth(h);
        self.treatments
            .par_iter()
            .map(|&a| {
                let (fit, hat) = match &self.index {
                    Some(index) => index.fit_with_hat(a, h, self.family),
                    None => smoother.fit_with_hat(a, self.pseudo),
                }
                .ok()?;
                Some((fit.intercept, hat))
            })
            .collect()
    }

    fn loo(&self, h: f64) -> f64 {
        let Some(fits) = self.fits(h) else {
            return f64::INFINITY;
        };
        let mut total = 0.0;
        for (&xi, &(fit, hat)) in self.pseudo.iter().zip(&fits) {
            if !(hat < 1.0) {
                return f64::INFINITY;
            }
            total += ((xi - fit) / (1.0 - hat)).powi(2);
        }
        total
    }

    fn oracle<T: Fn(f64) -> f64>(&self, h: f64, truth: &T) -> f64 {
        let Some(fits) = self.fits(h) else {
            return f64::INFINITY;
        };
        let total: f64 = self.treatments.iter().zip(&fits).map(|(&a, &(fit, _))| (truth(a) - fit).powi(2)).sum();
        total / self.treatments.len() as f64
    }
}

/// Sum over i of ((xi_i - theta_h(A_i)) / (1 - W_h(A_i)))^2, or infinity if
/// any observation has a singular design or a hat value of at least one.
pub fn loo_risk(h: f64, treatments: &[f64], pseudo: &[f64], family: KernelFamily) -> f64 {
    Fitter::new(treatments, pseudo, family).loo(h)
}

/// P_n[{theta(A) - theta_h(A)}^2] or infinity when any fit is singular.
pub fn oracle_risk<T>(h: f64, treatments: &[f64], pseudo: &[f64], family: KernelFamily, truth: &T) -> f64
where
    T: Fn(f64) -> f64 + Sync,
{
    Fitter::new(treatments, pseudo, family).oracle(h, truth)
}

/// Leave-one-out bandwidth for the pseudo-outcome regression.
pub fn select_bandwidth(
    treatments: &[f64],
    pseudo: &[f64],
    family: KernelFamily,
    search: &BandwidthSearch,
) -> BandwidthSearch {
    let fitter = Fitter::new(treatments, pseudo, family);
    minimize(search, |h| fitter.loo(h))
}

/// Bandwidth minimizing the oracle risk against a known curve.
pub fn oracle_bandwidth<T>(
    treatments: &[f64],
    truth: &T,
    pseudo: &[f64],
    family: KernelFamily,
    search: &BandwidthSearch,
) -> BandwidthSearch
where
    T: Fn(f64) -> f64 + Sync,
{
    let fitter = Fitter::new(treatments, pseudo, family);
    minimize(search, |h| fitter.oracle(h, truth))
}

/// (h, risk) pairs on the scan grid, for external plotting.
pub fn risk_table(treatments: &[f64], pseudo: &[f64], family: KernelFamily, search: &BandwidthSearch) -> Vec<(f64, f64)> {
    let fitter = Fitter::new(treatments, pseudo, family);
    search
        .scan_grid()
        .par_iter()
        .map(|&h| (h, fitter.loo(h)))
        .collect()
}

/// Split-sample variant: nuisances are fit on a random half and leave-one-out
/// selection runs on the other half with those pseudo-outcomes held fixed.
pub fn select_bandwidth_split<F>(
    data: &Dataset,
    fit_nuisance: F,
    kind: EstimatorKind,
    family: KernelFamily,
    search: &BandwidthSearch,
    seed: u64,
) -> Result<BandwidthSearch>
where
    F: Fn(&Dataset) -> Result<NuisanceFit>,
{
    if kind == EstimatorKind::Reg {
        return Err(Error::InvalidInput("the regression estimator has no bandwidth".into()));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, held) = idx.split_at(data.len() / 2);
    let train = data.subset(train)?;
    let held = data.subset(held)?;
    let fit = fit_nuisance(&train)?;
    let fit = if kind == EstimatorKind::Ipw { fit.without_outcome() } else { fit };
    let pseudo = compute_pseudo(&held, &fit);
    Ok(select_bandwidth(held.treatment(), &pseudo.values, family, search))
}
