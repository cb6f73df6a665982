//! Reading statistics and permutation covariances from disk.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use empnull::covariance::{permutation_cov, BinCovariance, CovarianceSource};

use crate::error::{CliError, CliResult};

/// Layout of a statistics file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputFormat {
    /// One number per line; blank lines and `#` comments skipped.
    Plain,
    /// Header row, values taken from the named column.
    Csv { column: String },
}

/// Raw bytes plus parsed statistics, so callers can digest what they read.
pub struct Statistics {
    pub values: Vec<f64>,
    pub bytes: Vec<u8>,
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn parse_finite(s: &str, line: usize) -> CliResult<f64> {
    let v: f64 = s.trim().parse().map_err(|_| CliError::Data(format!("line {line}: cannot parse {:?}", s.trim())))?;
    if !v.is_finite() {
        return Err(CliError::Data(format!("line {line}: non-finite value {v}")));
    }
    Ok(v)
}

pub fn parse_statistics(bytes: &[u8], format: &InputFormat) -> CliResult<Vec<f64>> {
    let values = match format {
        InputFormat::Plain => {
            let text = std::str::from_utf8(bytes).map_err(|e| CliError::Data(format!("input is not UTF-8: {e}")))?;
            let mut out = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let body = line.split('#').next().unwrap_or("").trim();
                if !body.is_empty() {
                    out.push(parse_finite(body, i + 1)?);
                }
            }
            out
        }
        InputFormat::Csv { column } => {
            let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
            let headers = rdr.headers().map_err(|e| CliError::Data(e.to_string()))?.clone();
            let idx = headers
                .iter()
                .position(|h| h == column)
                .ok_or_else(|| CliError::Data(format!("no column named {column:?}")))?;
            let mut out = Vec::new();
            for (i, rec) in rdr.records().enumerate() {
                let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
                let field = rec.get(idx).ok_or_else(|| CliError::Data(format!("line {}: missing column", i + 2)))?;
                out.push(parse_finite(field, i + 2)?);
            }
            out
        }
    };
    if values.is_empty() {
        return Err(CliError::Data("no statistics in input".into()));
    }
    Ok(values)
}

pub fn read_statistics(path: &Path, format: &InputFormat) -> CliResult<Statistics> {
    let bytes = read(path)?;
    let values = parse_statistics(&bytes, format)?;
    Ok(Statistics { values, bytes })
}

/// Replicate histograms (one row each, K integer counts) or, when the first
/// line is `matrix`, a precomputed K × K covariance.
pub fn read_perm_cov(path: &Path, k: usize) -> CliResult<BinCovariance> {
    let bytes = read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| CliError::Data(format!("covariance file is not UTF-8: {e}")))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();
    let is_matrix = lines.peek().map(|(_, l)| l.trim() == "matrix").unwrap_or(false);
    if is_matrix {
        lines.next();
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let row = line.split(',').map(|f| parse_finite(f, i + 1)).collect::<CliResult<Vec<f64>>>()?;
        if row.len() != k {
            return Err(CliError::Data(format!("line {}: {} columns, the histogram has {k} bins", i + 1, row.len())));
        }
        if !is_matrix && row.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
            return Err(CliError::Data(format!("line {}: replicate counts must be non-negative integers", i + 1)));
        }
        rows.push(row);
    }
    if is_matrix {
        if rows.len() != k {
            return Err(CliError::Data(format!("covariance has {} rows, expected {k}", rows.len())));
        }
        let m = DMatrix::from_fn(k, k, |i, j| rows[i][j]);
        Ok(BinCovariance::new(m, CovarianceSource::External)?)
    } else {
        if rows.len() < 2 {
            return Err(CliError::Data("need at least two replicate histograms".into()));
        }
        Ok(permutation_cov(&rows)?)
    }
}
