//! Large-N bias of the fitted null when the fitting interval also holds
//! alternative mass: the exact limit and its first-order approximation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expfam::{CanonicalParams, UsualParams};
use crate::nullfit::{fit_with, Convergence, DesignMatrix, FitPipeline};
pub use crate::scenario::{Component, MixtureScenario};

/// Pseudo sample size for the limiting fit; the fit is scale invariant, so
/// this only keeps the solver's absolute tolerances meaningful.
const PSEUDO_TOTAL: f64 = 1e6;

/// Exact and approximate asymptotic bias of (log p̂₀, θ̂) and (Ĉ, η̂).
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticBias {
    /// (log p₀, θ) of the scenario.
    pub theta_true: Vec<f64>,
    /// (log p₀ − ψ(η), η) of the scenario.
    pub eta_true: Vec<f64>,
    pub eta_limit: Vec<f64>,
    pub theta_limit: Vec<f64>,
    /// θ̂⁺_∞ − θ⁺.
    pub bias_exact: Vec<f64>,
    /// η̂⁺_∞ − η⁺.
    pub eta_bias_exact: Vec<f64>,
    /// First-order approximation on the θ scale.
    pub bias_approx: Vec<f64>,
    /// First-order approximation on the η scale.
    pub eta_bias_approx: Vec<f64>,
    pub convergence: Convergence,
}

impl AsymptoticBias {
    /// η̂⁺_∞ − η⁺, the input to the fdr bias factor.
    pub fn eta_shift(&self) -> &[f64] {
        &self.eta_bias_exact
    }
}

fn geometry(pipeline: &FitPipeline, total: f64) -> Result<DesignMatrix> {
    DesignMatrix::new(&pipeline.spec.centers(), pipeline.spec.bin_width, total, pipeline.family, pipeline.mask()?)
}

/// True (log p₀, θ) and (C, η) of the scenario under the pipeline's family.
pub fn true_parameters(scenario: &MixtureScenario, pipeline: &FitPipeline) -> Result<(UsualParams, CanonicalParams)> {
    let theta = pipeline.family.theta_of(&scenario.null)?;
    let usual = UsualParams { log_p0: scenario.p0.ln(), theta };
    let canonical = pipeline.family.eta_from_theta(&usual)?;
    Ok((usual, canonical))
}

/// Solves the large-N score equation
/// X'W[p₀f₀ + (1 − p₀)f_A − g₀ exp(Xη)] = 0 at the bin centres.
pub fn limiting_fit(scenario: &MixtureScenario, pipeline: &FitPipeline) -> Result<(CanonicalParams, Convergence)> {
    let dm = geometry(pipeline, PSEUDO_TOTAL)?;
    let scale = PSEUDO_TOTAL * pipeline.spec.bin_width;
    let y: Vec<f64> = dm.centers.iter().map(|&t| scale * scenario.pdf(t)).collect();
    let f = fit_with(dm, &y, &pipeline.options)?;
    Ok((f.canonical, f.convergence))
}

/// (1 − p₀)(X'W Diag(f₀)X)⁻¹X'W(f_A − f₀) − (log p₀, 0')' on the η scale.
pub fn eta_bias_approximation(scenario: &MixtureScenario, pipeline: &FitPipeline) -> Result<Vec<f64>> {
    let dm = geometry(pipeline, PSEUDO_TOTAL)?;
    let p = dm.p();
    let mut bread = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for k in dm.selected() {
        let t = dm.centers[k];
        let f0 = scenario.null_pdf(t);
        let fa = scenario.alternative_pdf(t);
        let row = dm.x.row(k).transpose();
        bread += &row * row.transpose() * f0;
        rhs += &row * (fa - f0);
    }
    let sol = bread.cholesky().ok_or(Error::Singular("X'W Diag(f0) X"))?.solve(&rhs);
    let mut out: Vec<f64> = sol.iter().map(|v| (1.0 - scenario.p0) * v).collect();
    out[0] -= scenario.p0.ln();
    Ok(out)
}

/// Exact limit, exact bias and the first-order approximation on both scales.
pub fn asymptotic_bias(scenario: &MixtureScenario, pipeline: &FitPipeline) -> Result<AsymptoticBias> {
    let family = &pipeline.family;
    let (usual, canonical) = true_parameters(scenario, pipeline)?;
    let (limit, convergence) = limiting_fit(scenario, pipeline)?;
    let theta_limit = family.theta_from_eta(&limit)?.to_vec();
    let theta_true = usual.to_vec();
    let eta_true = canonical.to_vec();
    let eta_limit = limit.to_vec();
    let eta_bias_approx = eta_bias_approximation(scenario, pipeline)?;
    let d = family.jacobian(&canonical)?;
    let bias_approx = (&d * DVector::from_column_slice(&eta_bias_approx)).as_slice().to_vec();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
    Ok(AsymptoticBias {
        bias_exact: diff(&theta_limit, &theta_true),
        eta_bias_exact: diff(&eta_limit, &eta_true),
        theta_true,
        eta_true,
        eta_limit,
        theta_limit,
        bias_approx,
        eta_bias_approx,
        convergence,
    })
}
