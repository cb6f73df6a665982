//! Delta-method covariances for the fitted null, with pluggable bin-count
//! covariance (multinomial, overdispersed, bootstrap, permutation).

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nullfit::{FitPipeline, NullFit};
use crate::par::{map_indexed, stream_rng, Execution};

/// Where a bin-count covariance came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovarianceSource {
    Multinomial,
    Bootstrap { replicates: usize },
    Permutation { replicates: usize },
    /// φ̂ times the multinomial form.
    Overdispersed { phi: f64 },
    /// Supplied directly as a matrix.
    External,
}

/// Covariance of the K bin counts.
#[derive(Debug, Clone, PartialEq)]
pub struct BinCovariance {
    pub matrix: DMatrix<f64>,
    pub source: CovarianceSource,
}

const SYM_TOL: f64 = 1e-10;
const DIAG_SLACK: f64 = 1e-12;

fn check_covariance(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Invalid(format!("covariance is {}x{}", m.nrows(), m.ncols())));
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        if !m[(i, i)].is_finite() {
            return Err(Error::NonFinite { index: i });
        }
        if m[(i, i)] < -DIAG_SLACK * scale {
            return Err(Error::Invalid(format!("negative variance {} at bin {}", m[(i, i)], i)));
        }
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > SYM_TOL * scale {
                return Err(Error::Invalid(format!("covariance not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// (M + M')/2.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

impl BinCovariance {
    /// Validates symmetry and the diagonal.
    pub fn new(matrix: DMatrix<f64>, source: CovarianceSource) -> Result<Self> {
        check_covariance(&matrix)?;
        Ok(Self { matrix, source })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Same covariance multiplied by `c ≥ 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        crate::error::check_finite("scale", c)?;
        if c < 0.0 {
            return Err(Error::Domain { what: "covariance scale", value: c });
        }
        Ok(Self { matrix: &self.matrix * c, source: self.source })
    }
}

/// Diag(λ) − λλ'/N.
pub fn multinomial_matrix(lambda: &[f64], total: f64) -> DMatrix<f64> {
    let k = lambda.len();
    DMatrix::from_fn(k, k, |i, j| {
        let d = if i == j { lambda[i] } else { 0.0 };
        d - lambda[i] * lambda[j] / total
    })
}

/// Diag(ŷ) − ŷŷ'/N over all K bins.
pub fn multinomial_cov(fit: &NullFit) -> BinCovariance {
    BinCovariance {
        matrix: multinomial_matrix(&fit.fitted_counts, fit.design.total),
        source: CovarianceSource::Multinomial,
    }
}

/// φ̂ (Diag(ŷ) − ŷŷ'/N).
pub fn overdispersed_cov(fit: &NullFit) -> Result<BinCovariance> {
    let phi = fit.overdispersion()?;
    Ok(BinCovariance {
        matrix: multinomial_matrix(&fit.fitted_counts, fit.design.total) * phi,
        source: CovarianceSource::Overdispersed { phi },
    })
}

/// Delta-method covariances of a fit under a given bin-count covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct FitCovariances {
    /// Covariance of (Ĉ, η̂).
    pub cov_eta_plus: DMatrix<f64>,
    /// Covariance of (log p̂₀, θ̂).
    pub cov_theta_plus: DMatrix<f64>,
    /// ∂(Ĉ, η̂)/∂y = (X'WV̂X)⁻¹X'W, p × K.
    pub eta_sensitivity: DMatrix<f64>,
    /// Covariance of ŷ.
    pub cov_fitted: DMatrix<f64>,
    /// Covariance of y − ŷ.
    pub cov_alternative: DMatrix<f64>,
}

impl FitCovariances {
    /// ∂ log ŷ/∂y = X(X'WV̂X)⁻¹X'W, K × K.
    pub fn d_y(&self, fit: &NullFit) -> DMatrix<f64> {
        &fit.design.x * &self.eta_sensitivity
    }

    /// Standard errors of (log p̂₀, θ̂).
    pub fn theta_se(&self) -> Vec<f64> {
        self.cov_theta_plus.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    pub fn eta_se(&self) -> Vec<f64> {
        self.cov_eta_plus.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

/// (X'WV̂X)⁻¹ with V̂ = Diag(ŷ).
pub fn bread_inverse(fit: &NullFit) -> Result<DMatrix<f64>> {
    let dm = &fit.design;
    let p = dm.p();
    let mut b = DMatrix::zeros(p, p);
    for k in dm.selected() {
        let w = dm.weights[k] * fit.fitted_counts[k];
        let row = dm.x.row(k);
        b += row.transpose() * row * w;
    }
    let chol = b.cholesky().ok_or(Error::Singular("X'WV̂X"))?;
    Ok(chol.inverse())
}

/// (X'WV̂X)⁻¹X'W.
pub fn eta_sensitivity(fit: &NullFit) -> Result<DMatrix<f64>> {
    let binv = bread_inverse(fit)?;
    let mut xw = fit.design.x.transpose();
    for k in 0..fit.design.num_bins() {
        let w = fit.design.weights[k];
        xw.column_mut(k).scale_mut(w);
    }
    Ok(binv * xw)
}

/// Sandwich covariances of η̂⁺, θ̂⁺, ŷ and y − ŷ.
pub fn param_cov(fit: &NullFit, vn: &BinCovariance) -> Result<FitCovariances> {
    let k = fit.design.num_bins();
    if vn.dim() != k {
        return Err(Error::Ragged { row: 0, expected: k, found: vn.dim() });
    }
    let e = eta_sensitivity(fit)?;
    let ev = &e * &vn.matrix;
    let cov_eta_plus = symmetrize(&(&ev * e.transpose()));
    let d = fit.family().jacobian(&fit.canonical)?;
    let cov_theta_plus = symmetrize(&(&d * &cov_eta_plus * d.transpose()));

    // P = V̂ D_y = Diag(ŷ) X E; P V_N = Diag(ŷ) X (E V_N).
    let mut xy = fit.design.x.clone();
    for (j, &y) in fit.fitted_counts.iter().enumerate() {
        xy.row_mut(j).scale_mut(y);
    }
    let cov_fitted = symmetrize(&(&xy * &cov_eta_plus * xy.transpose()));
    let m = &xy * &ev;
    let cov_alternative = symmetrize(&(&vn.matrix - &m - m.transpose() + &cov_fitted));
    Ok(FitCovariances { cov_eta_plus, cov_theta_plus, eta_sensitivity: e, cov_fitted, cov_alternative })
}

/// Multinomial covariance of θ̂⁺ without forming any K × K matrix.
pub fn theta_cov_multinomial(fit: &NullFit) -> Result<DMatrix<f64>> {
    let e = eta_sensitivity(fit)?;
    let y = DVector::from_column_slice(&fit.fitted_counts);
    // E Diag(ŷ) E' − (Eŷ)(Eŷ)'/N
    let mut ed = e.clone();
    for (j, &v) in fit.fitted_counts.iter().enumerate() {
        ed.column_mut(j).scale_mut(v);
    }
    let ey = &e * &y;
    let cov_eta = symmetrize(&(&ed * e.transpose() - &ey * ey.transpose() / fit.design.total));
    let d = fit.family().jacobian(&fit.canonical)?;
    Ok(symmetrize(&(&d * cov_eta * d.transpose())))
}

/// Empirical covariance of equal-length rows with an (n − 1) denominator.
pub fn empirical_cov(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.len() < 2 {
        return Err(Error::Invalid(format!("need at least 2 replicates, got {}", rows.len())));
    }
    let k = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != k {
            return Err(Error::Ragged { row: i, expected: k, found: r.len() });
        }
    }
    let n = rows.len() as f64;
    let mut mean = DVector::zeros(k);
    for r in rows {
        mean += DVector::from_column_slice(r);
    }
    mean /= n;
    let mut acc = DMatrix::zeros(k, k);
    for r in rows {
        let d = DVector::from_column_slice(r) - &mean;
        acc.ger(1.0, &d, &d, 1.0);
    }
    Ok(symmetrize(&(acc / (n - 1.0))))
}

/// Empirical covariance of P replicate histograms (one row each).
pub fn permutation_cov(replicates: &[Vec<f64>]) -> Result<BinCovariance> {
    let m = empirical_cov(replicates)?;
    BinCovariance::new(m, CovarianceSource::Permutation { replicates: replicates.len() })
}

/// Bootstrap settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    pub execution: Execution,
}

/// Bootstrap covariances of the bin counts and of θ̂⁺.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub bins: BinCovariance,
    pub theta_cov: DMatrix<f64>,
    pub eta_cov: DMatrix<f64>,
    /// Replicates whose refit failed.
    pub failures: usize,
}

/// Largest tolerated share of failed replicate fits.
pub const MAX_FAILURE_FRACTION: f64 = 0.10;

/// One bootstrap resample of `statistics`, drawn from stream `(seed, b)`.
pub fn resample(statistics: &[f64], seed: u64, b: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, &[b as u64]);
    let n = statistics.len();
    (0..n).map(|_| statistics[rng.random_range(0..n)]).collect()
}

/// Resamples the statistics with replacement, re-bins and refits.
pub fn bootstrap_cov(statistics: &[f64], pipeline: &FitPipeline, cfg: &BootstrapConfig) -> Result<BootstrapResult> {
    if cfg.replicates < 2 {
        return Err(Error::Invalid(format!("bootstrap needs B >= 2, got {}", cfg.replicates)));
    }
    if statistics.is_empty() {
        return Err(Error::EmptyInput);
    }
    let runs = map_indexed(cfg.execution, cfg.replicates, |b| {
        let sample = resample(statistics, cfg.seed, b);
        let h = crate::histogram::build_histogram(&sample, pipeline.spec)?;
        let counts = h.counts_f64();
        let fit = pipeline.run_histogram(&h)?;
        Ok::<_, Error>((counts, fit.usual.to_vec(), fit.canonical.to_vec()))
    });
    let mut bins = Vec::new();
    let mut thetas = Vec::new();
    let mut etas = Vec::new();
    let mut failures = 0;
    for r in runs {
        match r {
            Ok((c, t, e)) => {
                bins.push(c);
                thetas.push(t);
                etas.push(e);
            }
            Err(_) => failures += 1,
        }
    }
    if failures as f64 > MAX_FAILURE_FRACTION * cfg.replicates as f64 || bins.len() < 2 {
        return Err(Error::TooManyFailures { failed: failures, total: cfg.replicates });
    }
    Ok(BootstrapResult {
        bins: BinCovariance::new(empirical_cov(&bins)?, CovarianceSource::Bootstrap { replicates: bins.len() })?,
        theta_cov: empirical_cov(&thetas)?,
        eta_cov: empirical_cov(&etas)?,
        failures,
    })
}
