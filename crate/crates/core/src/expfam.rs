//! Exponential families and subfamilies used as null models.
//!
//! A family member has density `g₀(t) exp(x(t)'η − ψ(η))`. The fit works on
//! the augmented canonical vector `(C, η)` with `log p₀ = C + ψ(η)`, and
//! reports the usual parameters `(log p₀, θ)`.

use nalgebra::DMatrix;
use statrs::function::gamma::{digamma as psi_fn, ln_gamma};

use crate::error::{check_finite, check_positive, Error, Result};
use crate::special::Distribution;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A fully specified normal or scaled-χ² density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParametricDensity {
    Normal { mean: f64, var: f64 },
    ScaledChiSq { scale: f64, df: f64 },
}

impl ParametricDensity {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ParametricDensity::Normal { mean, var } => {
                check_finite("normal mean", mean)?;
                check_positive("normal variance", var)
            }
            ParametricDensity::ScaledChiSq { scale, df } => {
                check_positive("chi-square scale", scale)?;
                check_positive("chi-square df", df)
            }
        }
    }

    pub fn distribution(&self) -> Distribution {
        match *self {
            ParametricDensity::Normal { mean, var } => Distribution::Normal { mean, var },
            ParametricDensity::ScaledChiSq { scale, df } => Distribution::ScaledChiSq { scale, df },
        }
    }

    pub fn in_support(&self, t: f64) -> bool {
        match self {
            ParametricDensity::Normal { .. } => t.is_finite(),
            ParametricDensity::ScaledChiSq { .. } => t > 0.0 && t.is_finite(),
        }
    }

    /// log f(t); −∞ outside the support.
    pub fn ln_pdf(&self, t: f64) -> f64 {
        if !self.in_support(t) {
            return f64::NEG_INFINITY;
        }
        match *self {
            ParametricDensity::Normal { mean, var } => {
                let z = t - mean;
                -0.5 * (LN_2PI + var.ln() + z * z / var)
            }
            ParametricDensity::ScaledChiSq { scale, df } => {
                let k = 0.5 * df;
                (k - 1.0) * t.ln() - t / (2.0 * scale) - k * (2.0 * scale).ln() - ln_gamma(k)
            }
        }
    }

    pub fn pdf(&self, t: f64) -> f64 {
        self.ln_pdf(t).exp()
    }

    /// f''(t) in closed form.
    pub fn second_derivative(&self, t: f64) -> f64 {
        match *self {
            ParametricDensity::Normal { mean, var } => {
                let z2 = (t - mean) * (t - mean) / var;
                self.pdf(t) * (z2 - 1.0) / var
            }
            ParametricDensity::ScaledChiSq { scale, df } => {
                if t <= 0.0 {
                    return f64::NAN;
                }
                let km1 = 0.5 * df - 1.0;
                let g = km1 / t - 1.0 / (2.0 * scale);
                self.pdf(t) * (g * g - km1 / (t * t))
            }
        }
    }

    /// Location of the maximum, or `None` when the density is unbounded at 0.
    pub fn mode(&self) -> Option<f64> {
        match *self {
            ParametricDensity::Normal { mean, .. } => Some(mean),
            ParametricDensity::ScaledChiSq { scale, df } => {
                if df > 2.0 {
                    Some(scale * (df - 2.0))
                } else if df == 2.0 {
                    Some(0.0)
                } else {
                    None
                }
            }
        }
    }
}

/// Which null family is fitted, with any parameters held fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FamilyKind {
    /// N(μ, σ²), both free.
    NormalFull,
    /// N(μ, σ₀²) with the variance fixed.
    NormalMeanOnly { var: f64 },
    /// N(μ₀, σ²) with the mean fixed.
    NormalVarOnly { mean: f64 },
    /// aχ²(ν), both free.
    ChiSqFull,
    /// aχ²(ν₀) with the degrees of freedom fixed.
    ChiSqScaleOnly { df: f64 },
    /// a₀χ²(ν) with the scale fixed.
    ChiSqDfOnly { scale: f64 },
    /// Fixed null density; only the intercept (hence p₀) is estimated.
    InterceptOnly { null: ParametricDensity },
}

/// A validated [`FamilyKind`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilySpec {
    kind: FamilyKind,
}

/// `(log p₀, θ)`; θ is `(μ, σ²)`, `(a, ν)`, the single free parameter, or empty.
#[derive(Debug, Clone, PartialEq)]
pub struct UsualParams {
    pub log_p0: f64,
    pub theta: Vec<f64>,
}

/// `(C, η)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalParams {
    pub intercept: f64,
    pub eta: Vec<f64>,
}

impl CanonicalParams {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.eta.len() + 1);
        v.push(self.intercept);
        v.extend_from_slice(&self.eta);
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self { intercept: v[0], eta: v[1..].to_vec() }
    }
}

impl UsualParams {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.theta.len() + 1);
        v.push(self.log_p0);
        v.extend_from_slice(&self.theta);
        v
    }
}

fn domain(msg: &str) -> Error {
    Error::DecodeDomain(msg.to_string())
}

impl FamilySpec {
    pub fn new(kind: FamilyKind) -> Result<Self> {
        match kind {
            FamilyKind::NormalFull | FamilyKind::ChiSqFull => {}
            FamilyKind::NormalMeanOnly { var } => check_positive("fixed variance", var)?,
            FamilyKind::NormalVarOnly { mean } => check_finite("fixed mean", mean)?,
            FamilyKind::ChiSqScaleOnly { df } => check_positive("fixed df", df)?,
            FamilyKind::ChiSqDfOnly { scale } => check_positive("fixed scale", scale)?,
            FamilyKind::InterceptOnly { null } => null.validate()?,
        }
        Ok(Self { kind })
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    /// Number of free canonical parameters, excluding the intercept.
    pub fn dim(&self) -> usize {
        match self.kind {
            FamilyKind::NormalFull | FamilyKind::ChiSqFull => 2,
            FamilyKind::InterceptOnly { .. } => 0,
            _ => 1,
        }
    }

    /// Selection string understood by the command line.
    pub fn name(&self) -> &'static str {
        match self.kind {
            FamilyKind::NormalFull => "normal",
            FamilyKind::NormalMeanOnly { .. } => "normal:mean",
            FamilyKind::NormalVarOnly { .. } => "normal:var",
            FamilyKind::ChiSqFull => "chisq",
            FamilyKind::ChiSqScaleOnly { .. } => "chisq:scale",
            FamilyKind::ChiSqDfOnly { .. } => "chisq:df",
            FamilyKind::InterceptOnly { .. } => "p0only",
        }
    }

    /// Labels of `(log p₀, θ)`.
    pub fn param_names(&self) -> Vec<&'static str> {
        let theta: &[&'static str] = match self.kind {
            FamilyKind::NormalFull => &["mu", "sigma2"],
            FamilyKind::NormalMeanOnly { .. } => &["mu"],
            FamilyKind::NormalVarOnly { .. } => &["sigma2"],
            FamilyKind::ChiSqFull => &["a", "nu"],
            FamilyKind::ChiSqScaleOnly { .. } => &["a"],
            FamilyKind::ChiSqDfOnly { .. } => &["nu"],
            FamilyKind::InterceptOnly { .. } => &[],
        };
        std::iter::once("log_p0").chain(theta.iter().copied()).collect()
    }

    fn is_chisq(&self) -> bool {
        match self.kind {
            FamilyKind::ChiSqFull | FamilyKind::ChiSqScaleOnly { .. } | FamilyKind::ChiSqDfOnly { .. } => true,
            FamilyKind::InterceptOnly { null } => matches!(null, ParametricDensity::ScaledChiSq { .. }),
            _ => false,
        }
    }

    pub fn in_support(&self, t: f64) -> bool {
        if self.is_chisq() {
            t > 0.0 && t.is_finite()
        } else {
            t.is_finite()
        }
    }

    fn check_support(&self, t: f64) -> Result<()> {
        if self.in_support(t) {
            Ok(())
        } else {
            Err(Error::Domain { what: "statistic outside family support", value: t })
        }
    }

    /// x(t).
    pub fn sufficient_vector(&self, t: f64) -> Result<Vec<f64>> {
        self.check_support(t)?;
        Ok(match self.kind {
            FamilyKind::NormalFull => vec![t, t * t],
            FamilyKind::NormalMeanOnly { .. } => vec![t],
            FamilyKind::NormalVarOnly { mean } => vec![(t - mean) * (t - mean)],
            FamilyKind::ChiSqFull => vec![t, t.ln()],
            FamilyKind::ChiSqScaleOnly { .. } => vec![t],
            FamilyKind::ChiSqDfOnly { .. } => vec![t.ln()],
            FamilyKind::InterceptOnly { .. } => vec![],
        })
    }

    /// log g₀(t); fixed parameters of a subfamily live here.
    pub fn log_carrier(&self, t: f64) -> Result<f64> {
        self.check_support(t)?;
        Ok(match self.kind {
            FamilyKind::NormalFull | FamilyKind::NormalVarOnly { .. } => -0.5 * LN_2PI,
            FamilyKind::NormalMeanOnly { var } => -0.5 * (LN_2PI + var.ln()) - t * t / (2.0 * var),
            FamilyKind::ChiSqFull => 0.0,
            FamilyKind::ChiSqScaleOnly { df } => (0.5 * df - 1.0) * t.ln() - ln_gamma(0.5 * df),
            FamilyKind::ChiSqDfOnly { scale } => -t / (2.0 * scale),
            FamilyKind::InterceptOnly { null } => null.ln_pdf(t),
        })
    }

    fn check_eta(&self, eta: &[f64]) -> Result<()> {
        if eta.len() != self.dim() {
            return Err(Error::Invalid(format!("expected {} canonical parameters, got {}", self.dim(), eta.len())));
        }
        if eta.iter().any(|e| !e.is_finite()) {
            return Err(domain("non-finite canonical parameter"));
        }
        match self.kind {
            FamilyKind::NormalFull if eta[1] >= 0.0 => Err(domain("normal: eta2 must be negative (sigma2 > 0)")),
            FamilyKind::NormalVarOnly { .. } if eta[0] >= 0.0 => Err(domain("normal:var: eta must be negative (sigma2 > 0)")),
            FamilyKind::ChiSqFull if eta[0] >= 0.0 => Err(domain("chisq: eta1 must be negative (a > 0)")),
            FamilyKind::ChiSqFull if eta[1] <= -1.0 => Err(domain("chisq: eta2 must exceed -1 (nu > 0)")),
            FamilyKind::ChiSqScaleOnly { .. } if eta[0] >= 0.0 => Err(domain("chisq:scale: eta must be negative (a > 0)")),
            FamilyKind::ChiSqDfOnly { .. } if eta[0] <= -1.0 => Err(domain("chisq:df: eta must exceed -1 (nu > 0)")),
            _ => Ok(()),
        }
    }

    /// ψ(η).
    pub fn cumulant(&self, eta: &[f64]) -> Result<f64> {
        self.check_eta(eta)?;
        Ok(match self.kind {
            FamilyKind::NormalFull => -eta[0] * eta[0] / (4.0 * eta[1]) - 0.5 * (-2.0 * eta[1]).ln(),
            FamilyKind::NormalMeanOnly { var } => 0.5 * var * eta[0] * eta[0],
            FamilyKind::NormalVarOnly { .. } => -0.5 * (-2.0 * eta[0]).ln(),
            FamilyKind::ChiSqFull => ln_gamma(eta[1] + 1.0) - (eta[1] + 1.0) * (-eta[0]).ln(),
            FamilyKind::ChiSqScaleOnly { df } => -0.5 * df * (-eta[0]).ln(),
            FamilyKind::ChiSqDfOnly { scale } => ln_gamma(eta[0] + 1.0) + (eta[0] + 1.0) * (2.0 * scale).ln(),
            FamilyKind::InterceptOnly { .. } => 0.0,
        })
    }

    /// ∇ψ(η) = E[x(T)].
    pub fn cumulant_gradient(&self, eta: &[f64]) -> Result<Vec<f64>> {
        self.check_eta(eta)?;
        Ok(match self.kind {
            FamilyKind::NormalFull => {
                let var = -0.5 / eta[1];
                let mean = eta[0] * var;
                vec![mean, mean * mean + var]
            }
            FamilyKind::NormalMeanOnly { var } => vec![var * eta[0]],
            FamilyKind::NormalVarOnly { .. } => vec![-0.5 / eta[0]],
            FamilyKind::ChiSqFull => vec![-(eta[1] + 1.0) / eta[0], psi_fn(eta[1] + 1.0) - (-eta[0]).ln()],
            FamilyKind::ChiSqScaleOnly { df } => vec![-0.5 * df / eta[0]],
            FamilyKind::ChiSqDfOnly { scale } => vec![psi_fn(eta[0] + 1.0) + (2.0 * scale).ln()],
            FamilyKind::InterceptOnly { .. } => vec![],
        })
    }

    /// Decode `(C, η)` to `(log p₀, θ)` with `log p₀ = C + ψ(η)`.
    pub fn theta_from_eta(&self, c: &CanonicalParams) -> Result<UsualParams> {
        let psi = self.cumulant(&c.eta)?;
        let e = &c.eta;
        let theta = match self.kind {
            FamilyKind::NormalFull => {
                let var = -0.5 / e[1];
                vec![e[0] * var, var]
            }
            FamilyKind::NormalMeanOnly { var } => vec![var * e[0]],
            FamilyKind::NormalVarOnly { .. } => vec![-0.5 / e[0]],
            FamilyKind::ChiSqFull => vec![-0.5 / e[0], 2.0 * (e[1] + 1.0)],
            FamilyKind::ChiSqScaleOnly { .. } => vec![-0.5 / e[0]],
            FamilyKind::ChiSqDfOnly { .. } => vec![2.0 * (e[0] + 1.0)],
            FamilyKind::InterceptOnly { .. } => vec![],
        };
        Ok(UsualParams { log_p0: c.intercept + psi, theta })
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Invalid(format!("expected {} parameters, got {}", self.dim(), theta.len())));
        }
        match self.kind {
            FamilyKind::NormalFull => {
                check_finite("mu", theta[0])?;
                check_positive("sigma2", theta[1])
            }
            FamilyKind::NormalMeanOnly { .. } => check_finite("mu", theta[0]),
            FamilyKind::NormalVarOnly { .. } => check_positive("sigma2", theta[0]),
            FamilyKind::ChiSqFull => {
                check_positive("a", theta[0])?;
                check_positive("nu", theta[1])
            }
            FamilyKind::ChiSqScaleOnly { .. } => check_positive("a", theta[0]),
            FamilyKind::ChiSqDfOnly { .. } => check_positive("nu", theta[0]),
            FamilyKind::InterceptOnly { .. } => Ok(()),
        }
    }

    /// Encode `(log p₀, θ)` to `(C, η)`.
    pub fn eta_from_theta(&self, u: &UsualParams) -> Result<CanonicalParams> {
        check_finite("log p0", u.log_p0)?;
        self.check_theta(&u.theta)?;
        let th = &u.theta;
        let eta = match self.kind {
            FamilyKind::NormalFull => vec![th[0] / th[1], -0.5 / th[1]],
            FamilyKind::NormalMeanOnly { var } => vec![th[0] / var],
            FamilyKind::NormalVarOnly { .. } => vec![-0.5 / th[0]],
            FamilyKind::ChiSqFull => vec![-0.5 / th[0], 0.5 * th[1] - 1.0],
            FamilyKind::ChiSqScaleOnly { .. } => vec![-0.5 / th[0]],
            FamilyKind::ChiSqDfOnly { .. } => vec![0.5 * th[0] - 1.0],
            FamilyKind::InterceptOnly { .. } => vec![],
        };
        let psi = self.cumulant(&eta)?;
        Ok(CanonicalParams { intercept: u.log_p0 - psi, eta })
    }

    /// D = ∂(log p₀, θ)/∂(C, η), in closed form.
    pub fn jacobian(&self, c: &CanonicalParams) -> Result<DMatrix<f64>> {
        let u = self.theta_from_eta(c)?;
        let th = &u.theta;
        let d = match self.kind {
            FamilyKind::NormalFull => {
                let (m, v) = (th[0], th[1]);
                DMatrix::from_row_slice(3, 3, &[1.0, m, m * m + v, 0.0, v, 2.0 * m * v, 0.0, 0.0, 2.0 * v * v])
            }
            FamilyKind::NormalMeanOnly { var } => DMatrix::from_row_slice(2, 2, &[1.0, th[0], 0.0, var]),
            FamilyKind::NormalVarOnly { .. } => {
                let v = th[0];
                DMatrix::from_row_slice(2, 2, &[1.0, v, 0.0, 2.0 * v * v])
            }
            FamilyKind::ChiSqFull => {
                let (a, nu) = (th[0], th[1]);
                let g = psi_fn(0.5 * nu) + (2.0 * a).ln();
                DMatrix::from_row_slice(3, 3, &[1.0, a * nu, g, 0.0, 2.0 * a * a, 0.0, 0.0, 0.0, 2.0])
            }
            FamilyKind::ChiSqScaleOnly { df } => {
                let a = th[0];
                DMatrix::from_row_slice(2, 2, &[1.0, a * df, 0.0, 2.0 * a * a])
            }
            FamilyKind::ChiSqDfOnly { scale } => {
                let g = psi_fn(0.5 * th[0]) + (2.0 * scale).ln();
                DMatrix::from_row_slice(2, 2, &[1.0, g, 0.0, 2.0])
            }
            FamilyKind::InterceptOnly { .. } => DMatrix::from_element(1, 1, 1.0),
        };
        Ok(d)
    }

    /// The null density described by θ (fixed parameters filled in).
    pub fn shape(&self, theta: &[f64]) -> Result<ParametricDensity> {
        self.check_theta(theta)?;
        Ok(match self.kind {
            FamilyKind::NormalFull => ParametricDensity::Normal { mean: theta[0], var: theta[1] },
            FamilyKind::NormalMeanOnly { var } => ParametricDensity::Normal { mean: theta[0], var },
            FamilyKind::NormalVarOnly { mean } => ParametricDensity::Normal { mean, var: theta[0] },
            FamilyKind::ChiSqFull => ParametricDensity::ScaledChiSq { scale: theta[0], df: theta[1] },
            FamilyKind::ChiSqScaleOnly { df } => ParametricDensity::ScaledChiSq { scale: theta[0], df },
            FamilyKind::ChiSqDfOnly { scale } => ParametricDensity::ScaledChiSq { scale, df: theta[0] },
            FamilyKind::InterceptOnly { null } => null,
        })
    }

    /// θ of a density within this family (fixed parameters must agree).
    pub fn theta_of(&self, d: &ParametricDensity) -> Result<Vec<f64>> {
        let mismatch = || Error::Invalid(format!("{d:?} is not a member of family {}", self.name()));
        match (self.kind, *d) {
            (FamilyKind::NormalFull, ParametricDensity::Normal { mean, var }) => Ok(vec![mean, var]),
            (FamilyKind::NormalMeanOnly { var: v0 }, ParametricDensity::Normal { mean, var }) if var == v0 => Ok(vec![mean]),
            (FamilyKind::NormalVarOnly { mean: m0 }, ParametricDensity::Normal { mean, var }) if mean == m0 => Ok(vec![var]),
            (FamilyKind::ChiSqFull, ParametricDensity::ScaledChiSq { scale, df }) => Ok(vec![scale, df]),
            (FamilyKind::ChiSqScaleOnly { df: d0 }, ParametricDensity::ScaledChiSq { scale, df }) if df == d0 => Ok(vec![scale]),
            (FamilyKind::ChiSqDfOnly { scale: a0 }, ParametricDensity::ScaledChiSq { scale, df }) if scale == a0 => Ok(vec![df]),
            (FamilyKind::InterceptOnly { null }, other) if null == other => Ok(vec![]),
            _ => Err(mismatch()),
        }
    }

    /// f₀(t) = g₀(t) exp(x(t)'η − ψ(η)) for the member with parameters θ.
    pub fn density(&self, theta: &[f64], t: f64) -> Result<f64> {
        let c = self.eta_from_theta(&UsualParams { log_p0: 0.0, theta: theta.to_vec() })?;
        if !self.in_support(t) {
            return Ok(0.0);
        }
        let x = self.sufficient_vector(t)?;
        let psi = self.cumulant(&c.eta)?;
        let lin: f64 = x.iter().zip(&c.eta).map(|(a, b)| a * b).sum();
        Ok((self.log_carrier(t)? + lin - psi).exp())
    }
}

/// Reference distribution whose statistics are mapped onto a family scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputDistribution {
    /// t statistics, mapped to N(0, 1).
    StudentT { df: f64 },
    /// F statistics, mapped to χ²(d1).
    FisherF { d1: f64, d2: f64 },
}

/// Probability-preserving map of t or F statistics to normal or χ² scores.
pub fn quantile_transform(input: InputDistribution, statistics: &[f64]) -> Result<Vec<f64>> {
    let (from, to) = match input {
        InputDistribution::StudentT { df } => {
            (Distribution::StudentT { df }, Distribution::Normal { mean: 0.0, var: 1.0 })
        }
        InputDistribution::FisherF { d1, d2 } => (Distribution::FisherF { d1, d2 }, Distribution::ChiSq { df: d1 }),
    };
    from.validate()?;
    statistics
        .iter()
        .enumerate()
        .map(|(index, &x)| {
            if !x.is_finite() {
                return Err(Error::NonFinite { index });
            }
            if let InputDistribution::FisherF { .. } = input {
                if x < 0.0 {
                    return Err(Error::Domain { what: "F statistic", value: x });
                }
                if x == 0.0 {
                    return Ok(0.0);
                }
            }
            let p = from.cdf(x)?;
            if p <= 0.5 {
                to.quantile(p)
            } else {
                to.quantile_upper(from.sf(x)?)
            }
            .map_err(|_| Error::Domain { what: "statistic too extreme to transform", value: x })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad;
    use proptest::prelude::*;

    fn all_kinds() -> Vec<FamilySpec> {
        [
            FamilyKind::NormalFull,
            FamilyKind::NormalMeanOnly { var: 1.7 },
            FamilyKind::NormalVarOnly { mean: 0.3 },
            FamilyKind::ChiSqFull,
            FamilyKind::ChiSqScaleOnly { df: 4.0 },
            FamilyKind::ChiSqDfOnly { scale: 0.9 },
            FamilyKind::InterceptOnly { null: ParametricDensity::ScaledChiSq { scale: 1.0, df: 4.0 } },
        ]
        .into_iter()
        .map(|k| FamilySpec::new(k).unwrap())
        .collect()
    }

    fn theta_for(f: &FamilySpec, a: f64, b: f64) -> Vec<f64> {
        match f.dim() {
            0 => vec![],
            1 => match f.kind() {
                FamilyKind::NormalMeanOnly { .. } => vec![a - 1.0],
                _ => vec![a],
            },
            _ => match f.kind() {
                FamilyKind::NormalFull => vec![a - 1.0, b],
                _ => vec![a, b + 0.5],
            },
        }
    }

    #[test]
    fn sufficient_vector_examples() {
        let n = FamilySpec::new(FamilyKind::NormalFull).unwrap();
        assert_eq!(n.sufficient_vector(2.0).unwrap(), vec![2.0, 4.0]);
        let c = FamilySpec::new(FamilyKind::ChiSqFull).unwrap();
        assert_eq!(c.sufficient_vector(1.0).unwrap(), vec![1.0, 0.0]);
        assert!(c.sufficient_vector(0.0).is_err());
        let v = FamilySpec::new(FamilyKind::NormalVarOnly { mean: 0.0 }).unwrap();
        assert_eq!(v.sufficient_vector(-3.0).unwrap(), vec![9.0]);
    }

    #[test]
    fn carrier_examples() {
        let c = FamilySpec::new(FamilyKind::ChiSqFull).unwrap();
        assert_eq!(c.log_carrier(3.3).unwrap(), 0.0);
        let m = FamilySpec::new(FamilyKind::NormalMeanOnly { var: 1.0 }).unwrap();
        assert!((m.log_carrier(0.0).unwrap() + 0.5 * LN_2PI).abs() < 1e-15);
        let d = FamilySpec::new(FamilyKind::ChiSqDfOnly { scale: 1.0 }).unwrap();
        assert_eq!(d.log_carrier(2.0).unwrap(), -1.0);
        let s = FamilySpec::new(FamilyKind::ChiSqScaleOnly { df: 4.0 }).unwrap();
        assert!((s.log_carrier(3.0).unwrap() - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cumulant_examples() {
        let n = FamilySpec::new(FamilyKind::NormalFull).unwrap();
        assert!(n.cumulant(&[0.0, -0.5]).unwrap().abs() < 1e-15);
        let c = FamilySpec::new(FamilyKind::ChiSqFull).unwrap();
        assert!((c.cumulant(&[-0.5, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let m = FamilySpec::new(FamilyKind::NormalMeanOnly { var: 1.0 }).unwrap();
        assert_eq!(m.cumulant(&[2.0]).unwrap(), 2.0);
        assert!(n.cumulant(&[0.0, 0.1]).is_err());
        assert!(c.cumulant(&[-0.5, -1.5]).is_err());
    }

    #[test]
    fn decode_examples() {
        let n = FamilySpec::new(FamilyKind::NormalFull).unwrap();
        let eta = vec![0.2 / 1.44, -0.5 / 1.44];
        let psi = n.cumulant(&eta).unwrap();
        let u = n.theta_from_eta(&CanonicalParams { intercept: -psi, eta }).unwrap();
        assert!(u.log_p0.abs() < 1e-15);
        assert!((u.theta[0] - 0.2).abs() < 1e-12 && (u.theta[1] - 1.44).abs() < 1e-12);

        let c = FamilySpec::new(FamilyKind::ChiSqFull).unwrap();
        let u = c.theta_from_eta(&CanonicalParams { intercept: 0.0, eta: vec![-0.5258, 1.13375] }).unwrap();
        assert!((u.theta[0] - 0.9509).abs() < 5e-5 && (u.theta[1] - 4.2675).abs() < 5e-5);

        let p = FamilySpec::new(FamilyKind::InterceptOnly { null: ParametricDensity::ScaledChiSq { scale: 1.0, df: 4.0 } }).unwrap();
        let u = p.theta_from_eta(&CanonicalParams { intercept: -0.0105, eta: vec![] }).unwrap();
        assert_eq!(u.log_p0, -0.0105);

        let err = c.theta_from_eta(&CanonicalParams { intercept: 0.0, eta: vec![-0.5, -2.0] }).unwrap_err();
        assert!(matches!(err, Error::DecodeDomain(ref m) if m.contains("nu")));
    }

    #[test]
    fn encode_examples() {
        let n = FamilySpec::new(FamilyKind::NormalFull).unwrap();
        let e = n.eta_from_theta(&UsualParams { log_p0: 0.0, theta: vec![0.0, 1.0] }).unwrap();
        assert_eq!(e.eta, vec![0.0, -0.5]);
        let c = FamilySpec::new(FamilyKind::ChiSqFull).unwrap();
        assert_eq!(c.eta_from_theta(&UsualParams { log_p0: 0.0, theta: vec![1.0, 2.0] }).unwrap().eta, vec![-0.5, 0.0]);
        assert_eq!(c.eta_from_theta(&UsualParams { log_p0: 0.0, theta: vec![0.8, 3.0] }).unwrap().eta, vec![-0.625, 0.5]);
        assert!(c.eta_from_theta(&UsualParams { log_p0: 0.0, theta: vec![-1.0, 3.0] }).is_err());
    }

    #[test]
    fn jacobian_examples() {
        let n = FamilySpec::new(FamilyKind::NormalFull).unwrap();
        let c = n.eta_from_theta(&UsualParams { log_p0: 0.0, theta: vec![0.0, 1.0] }).unwrap();
        let d = n.jacobian(&c).unwrap();
        assert_eq!(d, DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0]));

        let x = FamilySpec::new(FamilyKind::ChiSqFull).unwrap();
        let c = x.eta_from_theta(&UsualParams { log_p0: 0.0, theta: vec![1.0, 2.0] }).unwrap();
        let d = x.jacobian(&c).unwrap();
        assert!((d[(0, 1)] - 2.0).abs() < 1e-15);
        assert!((d[(0, 2)] - 0.1159315).abs() < 1e-6);
        assert_eq!((d[(1, 1)], d[(2, 2)]), (2.0, 2.0));

        let s = FamilySpec::new(FamilyKind::ChiSqScaleOnly { df: 4.0 }).unwrap();
        let c = s.eta_from_theta(&UsualParams { log_p0: 0.0, theta: vec![1.0] }).unwrap();
        assert_eq!(s.jacobian(&c).unwrap(), DMatrix::from_row_slice(2, 2, &[1.0, 4.0, 0.0, 2.0]));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for f in all_kinds() {
            let theta = theta_for(&f, 1.3, 2.4);
            let c = f.eta_from_theta(&UsualParams { log_p0: -0.1, theta }).unwrap();
            let d = f.jacobian(&c).unwrap();
            let v = c.to_vec();
            for j in 0..v.len() {
                let h = 1e-6 * v[j].abs().max(1.0);
                let (mut up, mut dn) = (v.clone(), v.clone());
                up[j] += h;
                dn[j] -= h;
                let fu = f.theta_from_eta(&CanonicalParams::from_slice(&up)).unwrap().to_vec();
                let fd = f.theta_from_eta(&CanonicalParams::from_slice(&dn)).unwrap().to_vec();
                for i in 0..v.len() {
                    let num = (fu[i] - fd[i]) / (2.0 * h);
                    assert!((num - d[(i, j)]).abs() < 1e-5 * d[(i, j)].abs().max(1.0), "{} D[{i},{j}]", f.name());
                }
            }
        }
    }

    #[test]
    fn densities() {
        let n = FamilySpec::new(FamilyKind::NormalFull).unwrap();
        assert!((n.density(&[0.0, 1.0], 0.0).unwrap() - (-0.5 * LN_2PI).exp()).abs() < 1e-15);
        let c = FamilySpec::new(FamilyKind::ChiSqFull).unwrap();
        assert!((c.density(&[1.0, 2.0], 1.3).unwrap() - 0.5 * (-0.65f64).exp()).abs() < 1e-15);
        // The exponential special case tends to 1/2 at the origin.
        assert!((c.density(&[1.0, 2.0], 1e-12).unwrap() - 0.5).abs() < 1e-12);
        let mass = quad::integrate_to_infinity(|t| c.density(&[0.95, 4.27], t).unwrap(), 0.0, 1e-12);
        assert!((mass - 1.0).abs() < 1e-8);
    }

    #[test]
    fn density_matches_parametric_form() {
        for f in all_kinds() {
            let theta = theta_for(&f, 1.1, 1.9);
            let shape = f.shape(&theta).unwrap();
            assert_eq!(f.theta_of(&shape).unwrap(), theta);
            for &t in &[0.3, 1.0, 2.5] {
                let a = f.density(&theta, t).unwrap();
                let b = shape.pdf(t);
                assert!((a - b).abs() < 1e-13 * b.max(1e-300), "{}", f.name());
            }
        }
    }

    #[test]
    fn transform_examples() {
        let z = quantile_transform(InputDistribution::StudentT { df: 7.0 }, &[0.0]).unwrap();
        assert!(z[0].abs() < 1e-12);
        let fdist = Distribution::FisherF { d1: 2.0, d2: 20.0 };
        let med = fdist.quantile(0.5).unwrap();
        let x = quantile_transform(InputDistribution::FisherF { d1: 2.0, d2: 20.0 }, &[med]).unwrap();
        let chi_med = Distribution::ChiSq { df: 2.0 }.quantile(0.5).unwrap();
        assert!((x[0] - chi_med).abs() < 1e-8);
        assert!(matches!(
            quantile_transform(InputDistribution::StudentT { df: 3.0 }, &[1.0, f64::INFINITY]),
            Err(Error::NonFinite { index: 1 })
        ));
    }

    fn quad_mean(f: &FamilySpec, theta: &[f64], j: usize) -> f64 {
        let g = |t: f64| {
            if !f.in_support(t) {
                return 0.0;
            }
            f.sufficient_vector(t).unwrap()[j] * f.density(theta, t).unwrap()
        };
        if f.is_chisq() {
            quad::integrate(&g, 0.0, 1.0, 1e-13) + quad::integrate_to_infinity(&g, 1.0, 1e-13)
        } else {
            quad::integrate_real_line(g, 1e-13)
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn round_trips(a in 0.3f64..4.0, b in 0.5f64..6.0, lp in -2.0f64..0.5, which in 0usize..7) {
            let f = all_kinds()[which];
            let u = UsualParams { log_p0: lp, theta: theta_for(&f, a, b) };
            let c = f.eta_from_theta(&u).unwrap();
            let back = f.theta_from_eta(&c).unwrap();
            for (x, y) in back.to_vec().iter().zip(u.to_vec()) {
                prop_assert!((x - y).abs() < 1e-12 * y.abs().max(1.0));
            }
            let again = f.eta_from_theta(&back).unwrap();
            for (x, y) in again.to_vec().iter().zip(c.to_vec()) {
                prop_assert!((x - y).abs() < 1e-12 * y.abs().max(1.0));
            }
        }

        #[test]
        fn cumulant_gradient_is_mean_of_x(a in 0.6f64..2.0, b in 1.5f64..5.0, which in 0usize..6) {
            let f = all_kinds()[which];
            let theta = theta_for(&f, a, b);
            let c = f.eta_from_theta(&UsualParams { log_p0: 0.0, theta: theta.clone() }).unwrap();
            for j in 0..f.dim() {
                let h = 1e-5 * c.eta[j].abs().max(1.0);
                let (mut up, mut dn) = (c.eta.clone(), c.eta.clone());
                up[j] += h;
                dn[j] -= h;
                let fd = (f.cumulant(&up).unwrap() - f.cumulant(&dn).unwrap()) / (2.0 * h);
                let m = quad_mean(&f, &theta, j);
                prop_assert!((fd - m).abs() < 1e-5 * m.abs().max(1.0), "{} j={j}: {fd} vs {m}", f.name());
            }
        }

        #[test]
        fn densities_integrate_to_one(a in 0.5f64..2.5, b in 2.0f64..6.0, which in 0usize..7) {
            let f = all_kinds()[which];
            let theta = theta_for(&f, a, b);
            let g = |t: f64| f.density(&theta, t).unwrap();
            let mass = if f.is_chisq() {
                quad::integrate(&g, 0.0, 1.0, 1e-13) + quad::integrate_to_infinity(&g, 1.0, 1e-13)
            } else {
                quad::integrate_real_line(g, 1e-13)
            };
            prop_assert!((mass - 1.0).abs() < 1e-8, "{}: {mass}", f.name());
        }
    }
}
