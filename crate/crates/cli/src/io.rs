//! CSV input and output.
//!
//! Input files have a header naming `y`, `a` and covariates `l1..lp` (any
//! column order). Numbers are written with the shortest representation that
//! parses back to the same `f64`.

use std::path::Path;

use drcurve::{Covariates, Dataset, EffectCurve};

use crate::CliError;

/// Parsed columns of an input file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub outcome: Vec<f64>,
    pub treatment: Vec<f64>,
    /// Row-major covariates.
    pub covariates: Vec<f64>,
    pub p: usize,
}

impl Table {
    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    pub fn into_dataset(self, support: Option<(f64, f64)>) -> Result<Dataset, CliError> {
        let n = self.len();
        let cov = Covariates::from_row_major(self.covariates, n, self.p).map_err(CliError::from_core)?;
        match support {
            Some(s) => Dataset::new(cov, self.treatment, self.outcome, s),
            None => Dataset::with_observed_support(cov, self.treatment, self.outcome),
        }
        .map_err(|e| CliError::Input(e.to_string()))
    }
}

fn covariate_index(name: &str) -> Option<usize> {
    let k: usize = name.strip_prefix('l')?.parse().ok()?;
    (k >= 1 && name == format!("l{k}")).then_some(k)
}

pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?.clone();

    let find = |name: &str| headers.iter().position(|h| h == name);
    let y_col = find("y").ok_or_else(|| CliError::Input(format!("{}: missing column `y`", path.display())))?;
    let a_col = find("a").ok_or_else(|| CliError::Input(format!("{}: missing column `a`", path.display())))?;
    let mut cov_cols: Vec<(usize, usize)> = Vec::new();
    for (col, name) in headers.iter().enumerate() {
        if col == y_col || col == a_col {
            continue;
        }
        match covariate_index(name) {
            Some(k) => cov_cols.push((k, col)),
            None => {
                return Err(CliError::Input(format!(
                    "{}: unexpected column `{name}` (expected y, a, l1..lp)",
                    path.display()
                )))
            }
        }
    }
    cov_cols.sort_unstable();
    for (expected, &(k, _)) in (1..).zip(&cov_cols) {
        if k != expected {
            let missing = if k > expected { format!("l{expected}") } else { format!("l{k} (duplicate)") };
            return Err(CliError::Input(format!("{}: missing column `{missing}`", path.display())));
        }
    }

    let p = cov_cols.len();
    let mut table = Table { outcome: Vec::new(), treatment: Vec::new(), covariates: Vec::new(), p };
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| CliError::Input(format!("{}: row {row}: {e}", path.display())))?;
        let value = |col: usize| -> Result<f64, CliError> {
            let text = record.get(col).unwrap_or("");
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(CliError::Input(format!(
                    "{}: row {row}, column `{}`: '{text}' is not a finite number",
                    path.display(),
                    &headers[col]
                ))),
            }
        };
        table.outcome.push(value(y_col)?);
        table.treatment.push(value(a_col)?);
        for &(_, col) in &cov_cols {
            table.covariates.push(value(col)?);
        }
    }
    if table.len() < 2 {
        return Err(CliError::Input(format!("{}: need at least 2 data rows", path.display())));
    }
    Ok(table)
}

pub fn read_dataset(path: &Path, support: Option<(f64, f64)>) -> Result<Dataset, CliError> {
    read_table(path)?.into_dataset(support)
}

fn output_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("cannot write {}: {e}", path.display()))
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| output_error(path, e))?;
    let p = data.covariates().ncols();
    let mut header = vec!["y".to_string(), "a".to_string()];
    header.extend((1..=p).map(|k| format!("l{k}")));
    w.write_record(&header).map_err(|e| output_error(path, e))?;
    for i in 0..data.len() {
        let mut rec = vec![data.outcome()[i].to_string(), data.treatment()[i].to_string()];
        rec.extend(data.covariates().row(i).iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| output_error(path, e))?;
    }
    w.flush().map_err(|e| output_error(path, e))
}

/// Columns a, estimate, stderr, ci_low, ci_high; interval columns are empty
/// when the curve has no intervals.
pub fn write_curve(path: &Path, curve: &EffectCurve) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| output_error(path, e))?;
    w.write_record(["a", "estimate", "stderr", "ci_low", "ci_high"]).map_err(|e| output_error(path, e))?;
    for (k, (&a, &est)) in curve.grid.iter().zip(&curve.estimates).enumerate() {
        let ci = curve.intervals.as_ref().map(|ci| (ci.stderr[k], ci.lower[k], ci.upper[k]));
        let field = |f: fn((f64, f64, f64)) -> f64| ci.map_or(String::new(), |c| f(c).to_string());
        w.write_record([a.to_string(), est.to_string(), field(|c| c.0), field(|c| c.1), field(|c| c.2)])
            .map_err(|e| output_error(path, e))?;
    }
    w.flush().map_err(|e| output_error(path, e))
}

/// Rows of (h, risk).
pub fn write_pairs(path: &Path, header: [&str; 2], rows: &[(f64, f64)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| output_error(path, e))?;
    w.write_record(header).map_err(|e| output_error(path, e))?;
    for (x, y) in rows {
        w.write_record([x.to_string(), y.to_string()]).map_err(|e| output_error(path, e))?;
    }
    w.flush().map_err(|e| output_error(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| output_error(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| output_error(path, e))?;
    write_text(path, &(text + "\n"))
}
