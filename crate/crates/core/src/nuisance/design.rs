//! Declarative feature maps for nuisance models.
//!
//! Every term is a covariate expression (or the constant 1) multiplied by a
//! power of the treatment, so a linear predictor is a polynomial in `a` whose
//! coefficients depend only on the covariate row.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A covariate expression. Indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateExpr {
    Raw { index: usize },
    /// One of the four Kang-Schafer transforms of (l1, l2, l3, l4); `index`
    /// 0..=3 selects exp(l1/2), l2/(1+exp(l1))+10, (l1 l3/25+0.6)^3 or
    /// (l2+l4+20)^2.
    KangSchafer { index: usize },
}

impl CovariateExpr {
    pub fn eval(&self, l: &[f64]) -> f64 {
        match *self {
            Self::Raw { index } => l[index],
            Self::KangSchafer { index } => kang_schafer(l)[index],
        }
    }

    fn required_columns(&self) -> usize {
        match *self {
            Self::Raw { index } => index + 1,
            Self::KangSchafer { .. } => 4,
        }
    }
}

/// The Kang-Schafer covariate transforms of the first four covariates.
pub fn kang_schafer(l: &[f64]) -> [f64; 4] {
    [
        (l[0] / 2.0).exp(),
        l[1] / (1.0 + l[0].exp()) + 10.0,
        (l[0] * l[2] / 25.0 + 0.6).powi(3),
        (l[1] + l[3] + 20.0).powi(2),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate: Option<CovariateExpr>,
    #[serde(default)]
    pub a_power: u32,
}

impl Term {
    pub fn intercept() -> Self {
        Self { covariate: None, a_power: 0 }
    }

    pub fn raw(index: usize) -> Self {
        Self { covariate: Some(CovariateExpr::Raw { index }), a_power: 0 }
    }

    pub fn ks(index: usize) -> Self {
        Self { covariate: Some(CovariateExpr::KangSchafer { index }), a_power: 0 }
    }

    pub fn a_pow(power: u32) -> Self {
        Self { covariate: None, a_power: power }
    }

    pub fn times_a(self, power: u32) -> Self {
        Self { a_power: self.a_power + power, ..self }
    }

    fn covariate_part(&self, l: &[f64]) -> f64 {
        self.covariate.map_or(1.0, |c| c.eval(l))
    }
}

/// Ordered list of terms; the design vector of (l, a) is one value per term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureMap {
    pub terms: Vec<Term>,
}

impl FeatureMap {
    pub fn new(terms: Vec<Term>) -> Self {
        Self { terms }
    }

    pub fn intercept_only() -> Self {
        Self::new(vec![Term::intercept()])
    }

    /// 1, l_1, ..., l_p.
    pub fn linear(p: usize) -> Self {
        let mut terms = vec![Term::intercept()];
        terms.extend((0..p).map(Term::raw));
        Self::new(terms)
    }

    /// 1, l, a, a^2, and a * l_j for every covariate.
    pub fn linear_with_treatment(p: usize) -> Self {
        let mut terms = Self::linear(p).terms;
        terms.push(Term::a_pow(1));
        terms.push(Term::a_pow(2));
        terms.extend((0..p).map(|j| Term::raw(j).times_a(1)));
        Self::new(terms)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_a_power(&self) -> u32 {
        self.terms.iter().map(|t| t.a_power).max().unwrap_or(0)
    }

    pub fn depends_on_treatment(&self) -> bool {
        self.max_a_power() > 0
    }

    pub fn validate(&self, ncols: usize) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::InvalidInput("feature map has no terms".into()));
        }
        for t in &self.terms {
            if let Some(c) = t.covariate {
                if c.required_columns() > ncols {
                    return Err(Error::InvalidInput(format!(
                        "term {c:?} needs {} covariates, data has {ncols}",
                        c.required_columns()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn eval_into(&self, l: &[f64], a: f64, out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(&self.terms) {
            *o = t.covariate_part(l) * a.powi(t.a_power as i32);
        }
    }

    pub fn eval(&self, l: &[f64], a: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(l, a, &mut out);
        out
    }

    pub fn linear_predictor(&self, coef: &[f64], l: &[f64], a: f64) -> f64 {
        self.terms
            .iter()
            .zip(coef)
            .map(|(t, c)| c * t.covariate_part(l) * a.powi(t.a_power as i32))
            .sum()
    }

    /// Coefficients of the linear predictor as a polynomial in `a` for row `l`.
    pub fn polynomial_in_a(&self, coef: &[f64], l: &[f64]) -> Vec<f64> {
        let mut poly = vec![0.0; self.max_a_power() as usize + 1];
        for (t, c) in self.terms.iter().zip(coef) {
            poly[t.a_power as usize] += c * t.covariate_part(l);
        }
        poly
    }
}

/// Horner evaluation of a polynomial with ascending coefficients.
pub(crate) fn horner(poly: &[f64], a: f64) -> f64 {
    poly.iter().rev().fold(0.0, |acc, c| acc * a + c)
}
