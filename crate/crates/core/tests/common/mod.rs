#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights for E f(Z), Z ~ N(0, 1), from the eigen-decomposition of
/// the Hermite Jacobi matrix (Golub-Welsch).
pub fn gauss_hermite_normal(order: usize) -> Vec<(f64, f64)> {
    let mut jacobi = DMatrix::<f64>::zeros(order, order);
    for k in 1..order {
        let off = (k as f64 / 2.0).sqrt();
        jacobi[(k, k - 1)] = off;
        jacobi[(k - 1, k)] = off;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut rule: Vec<(f64, f64)> = (0..order)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            // Physicists' weights sum to sqrt(pi); dividing by it gives v0^2.
            (std::f64::consts::SQRT_2 * eig.eigenvalues[i], v0 * v0)
        })
        .collect();
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    rule
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sample_sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Mean and its standard error.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    (mean(v), sample_sd(v) / (v.len() as f64).sqrt())
}

pub fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    let panels = panels + panels % 2;
    let step = (hi - lo) / panels as f64;
    let mut total = f(lo) + f(hi);
    for k in 1..panels {
        total += f(lo + k as f64 * step) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    total * step / 3.0
}
