//! Generalized linear model fitting by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::expit;

pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// Bernoulli (quasi-)likelihood with logit link; responses in [0, 1].
    Logistic,
    /// Least squares.
    Identity,
}

impl Link {
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Self::Logistic => expit(eta),
            Self::Identity => eta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
}

/// Fits `y ~ link^{-1}(X beta)` where `x` is row-major with `k` columns.
pub fn fit_glm(x: &[f64], k: usize, y: &[f64], link: Link) -> Result<GlmFit> {
    let n = y.len();
    if k == 0 || x.len() != n * k {
        return Err(Error::InvalidInput(format!("design has {} entries for {n} x {k}", x.len())));
    }
    if n < k {
        return Err(Error::RankDeficient);
    }
    if link == Link::Logistic && y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::DomainError("logistic responses must lie in [0, 1]".into()));
    }
    // Columns are rescaled to unit root-mean-square for conditioning.
    let mut scale = vec![0.0; k];
    for row in x.chunks_exact(k) {
        for (s, v) in scale.iter_mut().zip(row) {
            *s += v * v;
        }
    }
    for s in &mut scale {
        *s = (*s / n as f64).sqrt();
        if *s == 0.0 {
            return Err(Error::RankDeficient);
        }
    }
    let xs = DMatrix::from_fn(n, k, |i, j| x[i * k + j] / scale[j]);
    let yv = DVector::from_column_slice(y);
    check_rank(&xs)?;

    let (beta, iterations) = match link {
        Link::Identity => (least_squares(&xs, &yv)?, 1),
        Link::Logistic => logistic_irls(&xs, &yv)?,
    };
    Ok(GlmFit {
        coefficients: beta.iter().zip(&scale).map(|(b, s)| b / s).collect(),
        iterations,
    })
}

fn check_rank(xs: &DMatrix<f64>) -> Result<()> {
    let gram = xs.tr_mul(xs);
    let eig = gram.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if !(min > 1e-11 * max) {
        return Err(Error::RankDeficient);
    }
    Ok(())
}

fn least_squares(xs: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let gram = xs.tr_mul(xs);
    let chol = gram.cholesky().ok_or(Error::RankDeficient)?;
    let mut beta = chol.solve(&xs.tr_mul(y));
    // One round of iterative refinement.
    let resid = y - xs * &beta;
    beta += chol.solve(&xs.tr_mul(&resid));
    Ok(beta)
}

fn log_likelihood(eta: &DVector<f64>, y: &DVector<f64>) -> f64 {
    eta.iter()
        .zip(y.iter())
        .map(|(&e, &v)| {
            // y log p + (1 - y) log(1 - p), written in terms of eta.
            let log1pexp = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            v * e - log1pexp
        })
        .sum()
}

fn logistic_irls(xs: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, usize)> {
    let k = xs.ncols();
    let mut beta = DVector::zeros(k);
    let mut eta = xs * &beta;
    let mut ll = log_likelihood(&eta, y);
    for iter in 1..=MAX_ITERATIONS {
        let p = eta.map(expit);
        let w = p.map(|v| v * (1.0 - v));
        let grad = xs.tr_mul(&(y - &p));
        let mut hess = DMatrix::zeros(k, k);
        for (i, row) in xs.row_iter().enumerate() {
            let wi = w[i];
            if wi == 0.0 {
                continue;
            }
            for a in 0..k {
                let ra = row[a] * wi;
                for b in 0..=a {
                    hess[(a, b)] += ra * row[b];
                }
            }
        }
        hess.fill_upper_triangle_with_lower_triangle();
        let chol = hess.cholesky().ok_or(Error::NoConvergence { iterations: iter })?;
        let step = chol.solve(&grad);

        let mut t = 1.0;
        let (mut next, mut next_eta, mut next_ll);
        loop {
            next = &beta + &step * t;
            next_eta = xs * &next;
            next_ll = log_likelihood(&next_eta, y);
            if next_ll >= ll - 1e-12 * ll.abs() || t < 1e-8 {
                break;
            }
            t *= 0.5;
        }
        let change = (next_ll - ll).abs();
        let max_step = (&step * t).amax();
        beta = next;
        eta = next_eta;
        ll = next_ll;
        if max_step < 1e-11 || (change < 1e-15 * (1.0 + ll.abs()) && max_step < 1e-8) {
            return Ok((beta, iter));
        }
    }
    Err(Error::NoConvergence { iterations: MAX_ITERATIONS })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn intercept_only_logistic_is_sample_proportion() {
        let y: Vec<f64> = (0..50).map(|i| if i % 5 < 3 { 1.0 } else { 0.0 }).collect();
        let fit = fit_glm(&vec![1.0; 50], 1, &y, Link::Logistic).unwrap();
        assert!((expit(fit.coefficients[0]) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn identity_recovers_exact_linear_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let beta = [1.5, -2.0, 0.25, 4.0];
        let n = 40;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let row = [1.0, rng.sample::<f64, _>(StandardNormal), rng.random_range(0.0..20.0), rng.random_range(-1.0..1.0)];
            y.push(row.iter().zip(&beta).map(|(a, b)| a * b).sum());
            x.extend_from_slice(&row);
        }
        let fit = fit_glm(&x, 4, &y, Link::Identity).unwrap();
        for (b, t) in fit.coefficients.iter().zip(&beta) {
            assert!((b - t).abs() < 1e-10, "{b} vs {t}");
        }
    }

    #[test]
    fn logistic_score_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 500;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let l: f64 = rng.sample(StandardNormal);
            let a: f64 = rng.random_range(0.0..5.0);
            let row = [1.0, l, a, a * l];
            let p = expit(0.3 + 0.5 * l - 0.2 * a + 0.1 * a * l);
            y.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
            x.extend_from_slice(&row);
        }
        let fit = fit_glm(&x, 4, &y, Link::Logistic).unwrap();
        let mut grad = [0.0; 4];
        for (row, &v) in x.chunks_exact(4).zip(&y) {
            let eta: f64 = row.iter().zip(&fit.coefficients).map(|(a, b)| a * b).sum();
            let r = v - expit(eta);
            for (g, xi) in grad.iter_mut().zip(row) {
                *g += xi * r;
            }
        }
        assert!(grad.iter().all(|g| g.abs() < 1e-8), "{grad:?}");
    }

    #[test]
    fn collinear_design_is_rank_deficient() {
        let x: Vec<f64> = (0..20).flat_map(|i| [1.0, i as f64, 2.0 * i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| (i % 2) as f64).collect();
        assert_eq!(fit_glm(&x, 3, &y, Link::Logistic).unwrap_err(), Error::RankDeficient);
        assert_eq!(fit_glm(&x, 3, &y, Link::Identity).unwrap_err(), Error::RankDeficient);
    }

    #[test]
    fn separated_data_does_not_converge() {
        let x: Vec<f64> = (0..20).flat_map(|i| [1.0, i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| if i < 10 { 0.0 } else { 1.0 }).collect();
        assert!(matches!(
            fit_glm(&x, 2, &y, Link::Logistic),
            Err(Error::NoConvergence { .. })
        ));
    }
}
