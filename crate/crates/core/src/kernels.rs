//! Kernel functions and the local linear smoother.
//!
//! The smoother fits `beta = argmin P_n[K_ha(A){xi - g_ha(A)' beta}^2]` with
//! `g_ha(t) = (1, (t - a)/h)` and `K_ha(t) = K((t - a)/h)/h`. The fitted
//! intercept is the curve estimate at `a` and the estimate is linear in the
//! responses, which gives closed forms for the smoother weights and the
//! hat-matrix diagonal.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Relative determinant threshold below which the local design is singular.
pub const SINGULARITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    Epanechnikov,
    Uniform,
    TruncatedGaussian,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 3] = [Self::Epanechnikov, Self::Uniform, Self::TruncatedGaussian];

    /// K(u), supported on [-1, 1].
    pub fn eval(self, u: f64) -> f64 {
        if !(u.abs() <= 1.0) {
            return 0.0;
        }
        match self {
            Self::Epanechnikov => 0.75 * (1.0 - u * u),
            Self::Uniform => 0.5,
            Self::TruncatedGaussian => {
                (-0.5 * u * u).exp() / (2.0 * PI).sqrt() / truncated_gaussian_mass()
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Epanechnikov => "epanechnikov",
            Self::Uniform => "uniform",
            Self::TruncatedGaussian => "truncated_gaussian",
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epanechnikov" => Ok(Self::Epanechnikov),
            "uniform" => Ok(Self::Uniform),
            "truncated_gaussian" | "gaussian" => Ok(Self::TruncatedGaussian),
            other => Err(Error::InvalidInput(format!("unknown kernel `{other}`"))),
        }
    }
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// 2 Phi(1) - 1 = erf(1/sqrt 2), the standard normal mass on [-1, 1].
const TRUNCATED_GAUSSIAN_MASS: f64 = 0.682_689_492_137_085_9;
/// erf(1).
const ERF_ONE: f64 = 0.842_700_792_949_714_9;

fn truncated_gaussian_mass() -> f64 {
    TRUNCATED_GAUSSIAN_MASS
}

/// Kernel family plus bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::InvalidInput(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { family, bandwidth })
    }

    pub fn epanechnikov(bandwidth: f64) -> Result<Self> {
        Self::new(KernelFamily::Epanechnikov, bandwidth)
    }

    /// K_ha(t) = K((t - a)/h) / h.
    pub fn weight(&self, t: f64, a: f64) -> f64 {
        self.family.eval((t - a) / self.bandwidth) / self.bandwidth
    }
}

/// Local affine basis g_ha(t) = (1, (t - a)/h).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFitBasis {
    pub center: f64,
    pub bandwidth: f64,
}

impl LocalFitBasis {
    pub fn new(center: f64, bandwidth: f64) -> Self {
        Self { center, bandwidth }
    }

    pub fn at(&self, t: f64) -> [f64; 2] {
        [1.0, (t - self.center) / self.bandwidth]
    }
}

pub fn eval_kernel(u: f64, spec: &KernelSpec) -> f64 {
    spec.family.eval(u)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelMoments {
    /// Second moment, the integral of u^2 K(u).
    pub nu2: f64,
    /// Roughness, the integral of K(u)^2.
    pub roughness: f64,
}

pub fn kernel_moments(spec: &KernelSpec) -> KernelMoments {
    match spec.family {
        KernelFamily::Epanechnikov => KernelMoments { nu2: 0.2, roughness: 0.6 },
        KernelFamily::Uniform => KernelMoments { nu2: 1.0 / 3.0, roughness: 0.5 },
        KernelFamily::TruncatedGaussian => {
            let c = truncated_gaussian_mass();
            let phi1 = (-0.5f64).exp() / (2.0 * PI).sqrt();
            KernelMoments {
                nu2: (c - 2.0 * phi1) / c,
                roughness: ERF_ONE / (2.0 * PI.sqrt() * c * c),
            }
        }
    }
}

/// Intercept and g-basis slope of a local linear fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFit {
    pub intercept: f64,
    pub slope: f64,
}

impl LocalFit {
    pub fn as_array(&self) -> [f64; 2] {
        [self.intercept, self.slope]
    }
}

/// Entries of D = P_n{g K g'} at one center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalDesign {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
}

impl LocalDesign {
    pub fn det(&self) -> f64 {
        self.s0 * self.s2 - self.s1 * self.s1
    }

    /// Inverse of the symmetric 2x2 design matrix.
    pub fn inverse(&self) -> [[f64; 2]; 2] {
        let det = self.det();
        [[self.s2 / det, -self.s1 / det], [-self.s1 / det, self.s0 / det]]
    }

    fn check(self, center: f64, distinct: usize) -> Result<Self> {
        let scale = 0.5 * (self.s0 + self.s2);
        if distinct < 2 || !(self.s0 > 0.0) || !(self.det() > SINGULARITY_TOLERANCE * scale * scale) {
            return Err(Error::SingularDesign { center });
        }
        Ok(self)
    }
}

/// Local linear smoother over a fixed treatment sample.
///
/// Treatments are sorted once so every center only visits the points inside
/// its kernel window.
#[derive(Debug, Clone)]
pub struct LocalSmoother {
    sorted: Vec<(f64, usize)>,
    family: KernelFamily,
    bandwidth: f64,
}

impl LocalSmoother {
    pub fn new(treatments: &[f64], spec: &KernelSpec) -> Self {
        let mut sorted: Vec<(f64, usize)> = treatments.iter().copied().zip(0..).collect();
        sorted.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        Self { sorted, family: spec.family, bandwidth: spec.bandwidth }
    }

    /// Same sample, different bandwidth; reuses the sort.
    pub fn with_bandwidth(&self, bandwidth: f64) -> Self {
        Self { sorted: self.sorted.clone(), family: self.family, bandwidth }
    }

    pub fn set_bandwidth(&mut self, bandwidth: f64) {
        self.bandwidth = bandwidth;
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn spec(&self) -> KernelSpec {
        KernelSpec { family: self.family, bandwidth: self.bandwidth }
    }

    /// (original index, u, K_ha) for every point with positive kernel weight.
    fn window(&self, a: f64) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        let h = self.bandwidth;
        let start = self.sorted.partition_point(|&(t, _)| t < a - h * (1.0 + 1e-12));
        self.sorted[start..]
            .iter()
            .take_while(move |&&(t, _)| t <= a + h * (1.0 + 1e-12))
            .filter_map(move |&(t, i)| {
                let u = (t - a) / h;
                let k = self.family.eval(u) / h;
                (k > 0.0).then_some((i, u, k))
            })
    }

    pub fn design(&self, a: f64) -> Result<LocalDesign> {
        let n = self.len() as f64;
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        let mut distinct = 0usize;
        let mut last = f64::NAN;
        for (_, u, k) in self.window(a) {
            s0 += k;
            s1 += k * u;
            s2 += k * u * u;
            if u != last {
                distinct += 1;
                last = u;
            }
        }
        LocalDesign { s0: s0 / n, s1: s1 / n, s2: s2 / n }.check(a, distinct)
    }

    pub fn fit(&self, a: f64, responses: &[f64]) -> Result<LocalFit> {
        self.fit_with_hat(a, responses).map(|(fit, _)| fit)
    }

    /// Fit at `a` together with the hat value (1,0) D^{-1} (1,0)' K(0)/(nh),
    /// from one pass over the window.
    pub fn fit_with_hat(&self, a: f64, responses: &[f64]) -> Result<(LocalFit, f64)> {
        let n = self.len() as f64;
        let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut distinct = 0usize;
        let mut last = f64::NAN;
        for (i, u, k) in self.window(a) {
            let ku = k * u;
            s0 += k;
            s1 += ku;
            s2 += ku * u;
            t0 += k * responses[i];
            t1 += ku * responses[i];
            if u != last {
                distinct += 1;
                last = u;
            }
        }
        let d = LocalDesign { s0: s0 / n, s1: s1 / n, s2: s2 / n }.check(a, distinct)?;
        let (t0, t1) = (t0 / n, t1 / n);
        let det = d.det();
        let fit = LocalFit { intercept: (d.s2 * t0 - d.s1 * t1) / det, slope: (d.s0 * t1 - d.s1 * t0) / det };
        Ok((fit, d.s2 / det * self.family.eval(0.0) / (n * self.bandwidth)))
    }

    /// Nonzero smoother weights at `a` as (original index, weight).
    pub fn weights(&self, a: f64) -> Result<Vec<(usize, f64)>> {
        let d = self.design(a)?;
        let scale = 1.0 / (self.len() as f64 * d.det());
        Ok(self.window(a).map(|(i, u, k)| (i, scale * k * (d.s2 - d.s1 * u))).collect())
    }

    /// Hat-matrix diagonal for an observation located at `a_i`:
    /// (1,0) D^{-1} (1,0)' K(0) / (n h).
    pub fn hat_at(&self, a_i: f64) -> Result<f64> {
        let d = self.design(a_i)?;
        Ok(d.s2 / d.det() * self.family.eval(0.0) / (self.len() as f64 * self.bandwidth))
    }
}

const BLOCK: usize = 32;

#[derive(Debug, Clone)]
struct MomentBlock {
    center: f64,
    first: f64,
    last: f64,
    /// sum (t - center)^k, k = 0..=4.
    t_pow: [f64; 5],
    /// sum y (t - center)^k, k = 0..=3.
    y_pow: [f64; 4],
}

/// Power sums of sorted treatments (and responses) in fixed-size blocks, so
/// local linear fits with a polynomial kernel cost O(n / B + B) per center.
/// A block is only used whole when it lies inside the window, hence its
/// width is at most 2h and the binomial shift to the center stays well
/// conditioned.
#[derive(Debug, Clone)]
pub struct MomentIndex {
    t: Vec<f64>,
    y: Vec<f64>,
    blocks: Vec<MomentBlock>,
}

const BINOM: [[f64; 5]; 5] = [
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0, 0.0, 0.0],
    [1.0, 2.0, 1.0, 0.0, 0.0],
    [1.0, 3.0, 3.0, 1.0, 0.0],
    [1.0, 4.0, 6.0, 4.0, 1.0],
];

impl MomentIndex {
    /// `None` for kernels that are not polynomials of degree at most two.
    pub fn new(treatments: &[f64], responses: &[f64], family: KernelFamily) -> Option<Self> {
        if family == KernelFamily::TruncatedGaussian || treatments.len() != responses.len() {
            return None;
        }
        let mut order: Vec<usize> = (0..treatments.len()).collect();
        order.sort_by(|&i, &j| treatments[i].total_cmp(&treatments[j]).then(i.cmp(&j)));
        let t: Vec<f64> = order.iter().map(|&i| treatments[i]).collect();
        let y: Vec<f64> = order.iter().map(|&i| responses[i]).collect();
        let blocks = t
            .chunks(BLOCK)
            .zip(y.chunks(BLOCK))
            .map(|(tb, yb)| {
                let center = 0.5 * (tb[0] + tb[tb.len() - 1]);
                let mut t_pow = [0.0; 5];
                let mut y_pow = [0.0; 4];
                for (&ti, &yi) in tb.iter().zip(yb) {
                    let d = ti - center;
                    let mut p = 1.0;
                    for k in 0..5 {
                        t_pow[k] += p;
                        if k < 4 {
                            y_pow[k] += yi * p;
                        }
                        p *= d;
                    }
                }
                MomentBlock { center, first: tb[0], last: tb[tb.len() - 1], t_pow, y_pow }
            })
            .collect();
        Some(Self { t, y, blocks })
    }

    /// Sums of (t - a)^m and y (t - a)^m over points with |t - a| / h <= 1.
    fn window_sums(&self, a: f64, h: f64) -> ([f64; 5], [f64; 4]) {
        let inside = |t: f64| ((t - a) / h).abs() <= 1.0;
        let mut sp = [0.0; 5];
        let mut yp = [0.0; 4];
        let start = self.t.partition_point(|&t| t < a - h * (1.0 + 1e-12));
        let mut i = start;
        while i < self.t.len() {
            let b = i / BLOCK;
            if i % BLOCK == 0 && inside(self.blocks[b].first) && inside(self.blocks[b].last) {
                let blk = &self.blocks[b];
                let shift = blk.center - a;
                let mut pw = [1.0; 5];
                for k in 1..5 {
                    pw[k] = pw[k - 1] * shift;
                }
                for m in 0..5 {
                    sp[m] += (0..=m).map(|k| BINOM[m][k] * blk.t_pow[k] * pw[m - k]).sum::<f64>();
                    if m < 4 {
                        yp[m] += (0..=m).map(|k| BINOM[m][k] * blk.y_pow[k] * pw[m - k]).sum::<f64>();
                    }
                }
                i += BLOCK.min(self.t.len() - i);
                continue;
            }
            if self.t[i] > a + h * (1.0 + 1e-12) {
                break;
            }
            if inside(self.t[i]) {
                let d = self.t[i] - a;
                let mut p = 1.0;
                for k in 0..5 {
                    sp[k] += p;
                    if k < 4 {
                        yp[k] += self.y[i] * p;
                    }
                    p *= d;
                }
            }
            i += 1;
        }
        (sp, yp)
    }

    /// Local linear fit at `a` and the hat value K(0) s2 / (n h det).
    pub fn fit_with_hat(&self, a: f64, h: f64, family: KernelFamily) -> Result<(LocalFit, f64)> {
        let (sp, yp) = self.window_sums(a, h);
        let n = self.t.len() as f64;
        // K(u) = c0 + c2 u^2 on [-1, 1].
        let (c0, c2) = match family {
            KernelFamily::Epanechnikov => (0.75, -0.75),
            KernelFamily::Uniform => (0.5, 0.0),
            KernelFamily::TruncatedGaussian => unreachable!("not indexed"),
        };
        let (h2, h3, h4) = (h * h, h * h * h, h * h * h * h);
        let scale = 1.0 / (n * h);
        let d = LocalDesign {
            s0: scale * (c0 * sp[0] + c2 * sp[2] / h2),
            s1: scale * (c0 * sp[1] / h + c2 * sp[3] / h3),
            s2: scale * (c0 * sp[2] / h2 + c2 * sp[4] / h4),
        }
        .check(a, if sp[0] >= 2.0 { 2 } else { 0 })?;
        let t0 = scale * (c0 * yp[0] + c2 * yp[2] / h2);
        let t1 = scale * (c0 * yp[1] / h + c2 * yp[3] / h3);
        let det = d.det();
        let fit = LocalFit { intercept: (d.s2 * t0 - d.s1 * t1) / det, slope: (d.s0 * t1 - d.s1 * t0) / det };
        Ok((fit, d.s2 / det * family.eval(0.0) / (n * h)))
    }
}

pub fn local_linear_fit(treatments: &[f64], responses: &[f64], a: f64, spec: &KernelSpec) -> Result<LocalFit> {
    if treatments.len() != responses.len() {
        return Err(Error::InvalidInput(format!(
            "{} treatments but {} responses",
            treatments.len(),
            responses.len()
        )));
    }
    LocalSmoother::new(treatments, spec).fit(a, responses)
}

/// Dense smoother row w with intercept = sum_i w_i xi_i.
pub fn smoother_row(treatments: &[f64], a: f64, spec: &KernelSpec) -> Result<Vec<f64>> {
    let mut row = vec![0.0; treatments.len()];
    for (i, w) in LocalSmoother::new(treatments, spec).weights(a)? {
        row[i] = w;
    }
    Ok(row)
}

pub fn hat_diagonal(treatments: &[f64], i: usize, spec: &KernelSpec) -> Result<f64> {
    let a_i = *treatments
        .get(i)
        .ok_or_else(|| Error::InvalidInput(format!("index {i} out of range")))?;
    LocalSmoother::new(treatments, spec).hat_at(a_i)
}
