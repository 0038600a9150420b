//! The simulation data-generating process: four standard normal covariates,
//! a scaled-beta treatment and a Bernoulli outcome.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::data::{Covariates, Dataset};
use crate::nuisance::{kang_schafer, FeatureMap, Term};
use crate::numeric::expit;

pub const NUM_COVARIATES: usize = 4;
/// Upper end of the treatment support; A / 20 is beta distributed.
pub const TREATMENT_SCALE: f64 = 20.0;
/// Intercept and slopes of the treatment mean on the logit scale.
pub const TREATMENT_COEF: [f64; 5] = [-0.8, 0.1, 0.1, -0.1, 0.2];
/// Intercept and covariate slopes of the outcome model.
pub const OUTCOME_BASE: [f64; 5] = [1.0, 0.2, 0.2, 0.3, -0.1];
pub const SUPPORT: (f64, f64) = (0.0, TREATMENT_SCALE);

/// Coefficient of a^3 in the outcome linear predictor.
pub fn cubic_coefficient() -> f64 {
    -(0.13f64.powi(3))
}

/// Outcome coefficients in the order of `outcome_design(true)`.
pub fn outcome_coefficients() -> [f64; 9] {
    let [b0, b1, b2, b3, b4] = OUTCOME_BASE;
    [b0, b1, b2, b3, b4, 0.1, -0.1, 0.1, cubic_coefficient()]
}

/// lambda(l) = E(A | l) = 20 expit(-0.8 + 0.1 l1 + 0.1 l2 - 0.1 l3 + 0.2 l4).
pub fn treatment_mean(l: &[f64]) -> f64 {
    let [g0, g1, g2, g3, g4] = TREATMENT_COEF;
    TREATMENT_SCALE * expit(g0 + g1 * l[0] + g2 * l[1] + g3 * l[2] + g4 * l[3])
}

/// Linear predictor of the outcome: an intercept part plus a cubic in a.
pub fn outcome_linear_predictor(l: &[f64], a: f64) -> f64 {
    let [b0, b1, b2, b3, b4] = OUTCOME_BASE;
    b0 + b1 * l[0] + b2 * l[1] + b3 * l[2] + b4 * l[3]
        + a * (0.1 - 0.1 * l[0] + 0.1 * l[2] + cubic_coefficient() * a * a)
}

/// mu(l, a) = P(Y = 1 | l, a).
pub fn outcome_mean(l: &[f64], a: f64) -> f64 {
    expit(outcome_linear_predictor(l, a))
}

/// Scaled beta density of A / 20 ~ Beta(lambda, 20 - lambda) given lambda.
pub fn beta_treatment_density(lambda: f64, a: f64) -> f64 {
    let x = a / TREATMENT_SCALE;
    if !(x > 0.0 && x < 1.0) {
        return 0.0;
    }
    let (p, q) = (lambda, TREATMENT_SCALE - lambda);
    let ln_b = ln_gamma(p) + ln_gamma(q) - ln_gamma(p + q);
    ((p - 1.0) * x.ln() + (q - 1.0) * (-x).ln_1p() - ln_b).exp() / TREATMENT_SCALE
}

/// pi(a | l).
pub fn treatment_density(a: f64, l: &[f64]) -> f64 {
    beta_treatment_density(treatment_mean(l), a)
}

/// Kang-Schafer transform of a covariate row.
pub fn misspecify_covariates(l: &[f64]) -> [f64; 4] {
    kang_schafer(l)
}

/// Treatment mean design on raw (`correct`) or transformed covariates.
pub fn treatment_design(correct: bool) -> FeatureMap {
    let cov = |j| if correct { Term::raw(j) } else { Term::ks(j) };
    let mut terms = vec![Term::intercept()];
    terms.extend((0..NUM_COVARIATES).map(cov));
    FeatureMap::new(terms)
}

/// Correct: 1, l1..l4, a, a l1, a l3, a^3. Misspecified: transformed
/// covariates in place of l and the a^3 term dropped.
pub fn outcome_design(correct: bool) -> FeatureMap {
    let cov = |j| if correct { Term::raw(j) } else { Term::ks(j) };
    let mut terms = vec![Term::intercept()];
    terms.extend((0..NUM_COVARIATES).map(cov));
    terms.push(Term::a_pow(1));
    terms.push(cov(0).times_a(1));
    terms.push(cov(2).times_a(1));
    if correct {
        terms.push(Term::a_pow(3));
    }
    FeatureMap::new(terms)
}

/// Draws `n` observations; deterministic in `seed`.
pub fn generate_data(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cov = Vec::with_capacity(n * NUM_COVARIATES);
    let mut treatment = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    for _ in 0..n {
        let l: [f64; NUM_COVARIATES] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let lambda = treatment_mean(&l);
        let beta = Beta::new(lambda, TREATMENT_SCALE - lambda).expect("beta shapes are positive");
        let a = TREATMENT_SCALE * beta.sample(&mut rng);
        let y = if rng.random::<f64>() < outcome_mean(&l, a) { 1.0 } else { 0.0 };
        cov.extend_from_slice(&l);
        treatment.push(a);
        outcome.push(y);
    }
    let cov = Covariates::from_row_major(cov, n, NUM_COVARIATES).expect("buffer sized above");
    Dataset::new(cov, treatment, outcome, SUPPORT).expect("generated values are finite and in range")
}
