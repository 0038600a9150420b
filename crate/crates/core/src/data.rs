use crate::error::{Error, Result};

/// Row-major n x p covariate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    values: Vec<f64>,
    nrows: usize,
    ncols: usize,
}

impl Covariates {
    pub fn from_row_major(values: Vec<f64>, nrows: usize, ncols: usize) -> Result<Self> {
        if values.len() != nrows * ncols {
            return Err(Error::InvalidInput(format!(
                "covariate buffer has {} values, expected {nrows} x {ncols}",
                values.len()
            )));
        }
        Ok(Self { values, nrows, ncols })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
            return Err(Error::InvalidInput(format!("covariate row {i} has inconsistent length")));
        }
        Ok(Self {
            values: rows.iter().flatten().copied().collect(),
            nrows: rows.len(),
            ncols,
        })
    }

    /// An n x 0 matrix (no covariates).
    pub fn empty(nrows: usize) -> Self {
        Self { values: Vec::new(), nrows, ncols: 0 }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.nrows).map(move |i| self.row(i))
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.ncols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self { values, nrows: indices.len(), ncols: self.ncols }
    }
}

/// An observational sample of (covariates, treatment, outcome) triples with
/// the declared support interval of the treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: Covariates,
    treatment: Vec<f64>,
    outcome: Vec<f64>,
    support: (f64, f64),
}

impl Dataset {
    pub fn new(
        covariates: Covariates,
        treatment: Vec<f64>,
        outcome: Vec<f64>,
        support: (f64, f64),
    ) -> Result<Self> {
        let n = treatment.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 observations, got {n}")));
        }
        if outcome.len() != n || covariates.nrows() != n {
            return Err(Error::InvalidInput(format!(
                "length mismatch: treatment {n}, outcome {}, covariate rows {}",
                outcome.len(),
                covariates.nrows()
            )));
        }
        if !(support.0.is_finite() && support.1.is_finite() && support.0 < support.1) {
            return Err(Error::InvalidInput(format!("invalid support {support:?}")));
        }
        if let Some(i) = covariates.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite covariate at row {}",
                i / covariates.ncols().max(1)
            )));
        }
        for (i, (&a, &y)) in treatment.iter().zip(&outcome).enumerate() {
            if !a.is_finite() || !y.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite value at row {i}")));
            }
            if a < support.0 || a > support.1 {
                return Err(Error::DomainError(format!(
                    "treatment {a} at row {i} outside support [{}, {}]",
                    support.0, support.1
                )));
            }
        }
        Ok(Self { covariates, treatment, outcome, support })
    }

    /// Dataset whose support is the observed treatment range.
    pub fn with_observed_support(covariates: Covariates, treatment: Vec<f64>, outcome: Vec<f64>) -> Result<Self> {
        let lo = treatment.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = treatment.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(covariates, treatment, outcome, (lo, hi))
    }

    pub fn len(&self) -> usize {
        self.treatment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.treatment.is_empty()
    }

    pub fn covariates(&self) -> &Covariates {
        &self.covariates
    }

    pub fn treatment(&self) -> &[f64] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    pub fn support_length(&self) -> f64 {
        self.support.1 - self.support.0
    }

    /// True when every outcome is exactly 0 or 1.
    pub fn has_binary_outcome(&self) -> bool {
        self.outcome.iter().all(|&y| y == 0.0 || y == 1.0)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            self.covariates.select(indices),
            indices.iter().map(|&i| self.treatment[i]).collect(),
            indices.iter().map(|&i| self.outcome[i]).collect(),
            self.support,
        )
    }

    /// Copy with outcomes replaced.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Self> {
        Self::new(self.covariates.clone(), self.treatment.clone(), outcome, self.support)
    }
}
