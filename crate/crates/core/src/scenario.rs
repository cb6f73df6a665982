//! Two-group mixture scenarios used for bias analysis and simulation.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution as _, Normal, Poisson};

use crate::error::{Error, Result};
use crate::expfam::ParametricDensity;
use crate::quad;
use crate::special::log_gamma;

/// A component density of the mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Component {
    Parametric(ParametricDensity),
    /// Noncentral χ² with `df` degrees of freedom and noncentrality `noncentrality`.
    NoncentralChiSq { df: f64, noncentrality: f64 },
}

fn chisq_ln_pdf(df: f64, t: f64) -> f64 {
    let h = 0.5 * df;
    (h - 1.0) * t.ln() - 0.5 * t - h * std::f64::consts::LN_2 - log_gamma(h).unwrap_or(f64::NAN)
}

impl Component {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Component::Parametric(d) => d.validate(),
            Component::NoncentralChiSq { df, noncentrality } => {
                crate::error::check_positive("degrees of freedom", df)?;
                crate::error::check_finite("noncentrality", noncentrality)?;
                if noncentrality < 0.0 {
                    return Err(Error::Domain { what: "noncentrality", value: noncentrality });
                }
                Ok(())
            }
        }
    }

    pub fn pdf(&self, t: f64) -> f64 {
        match *self {
            Component::Parametric(d) => d.pdf(t),
            Component::NoncentralChiSq { df, noncentrality } => noncentral_chisq_pdf(df, noncentrality, t),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Component::Parametric(ParametricDensity::Normal { mean, .. }) => mean,
            Component::Parametric(ParametricDensity::ScaledChiSq { scale, df }) => scale * df,
            Component::NoncentralChiSq { df, noncentrality } => df + noncentrality,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Component::Parametric(ParametricDensity::Normal { mean, var }) => {
                Normal::new(mean, var.sqrt()).expect("validated").sample(rng)
            }
            Component::Parametric(ParametricDensity::ScaledChiSq { scale, df }) => {
                scale * ChiSquared::new(df).expect("validated").sample(rng)
            }
            Component::NoncentralChiSq { df, noncentrality } => {
                let j = if noncentrality > 0.0 {
                    Poisson::new(0.5 * noncentrality).expect("validated").sample(rng)
                } else {
                    0.0
                };
                ChiSquared::new(df + 2.0 * j).expect("validated").sample(rng)
            }
        }
    }

    /// Support is the real line or the positive half-line.
    fn positive_support(&self) -> bool {
        !matches!(self, Component::Parametric(ParametricDensity::Normal { .. }))
    }
}

/// Poisson(δ/2) mixture of central χ²(df + 2j) densities, summed outward from
/// the largest weight until the remaining weight falls below 1e-12.
pub fn noncentral_chisq_pdf(df: f64, noncentrality: f64, t: f64) -> f64 {
    if !(t > 0.0) || t.is_infinite() {
        return 0.0;
    }
    if noncentrality == 0.0 {
        return chisq_ln_pdf(df, t).exp();
    }
    let m = 0.5 * noncentrality;
    let ln_w = |j: f64| -m + j * m.ln() - log_gamma(j + 1.0).unwrap_or(f64::NAN);
    let term = |j: f64| (ln_w(j) + chisq_ln_pdf(df + 2.0 * j, t)).exp();
    let peak = m.floor();
    let mut sum = term(peak);
    let mut mass = ln_w(peak).exp();
    let mut j = peak - 1.0;
    while j >= 0.0 {
        sum += term(j);
        mass += ln_w(j).exp();
        j -= 1.0;
    }
    let mut j = peak + 1.0;
    while 1.0 - mass > 1e-12 {
        let w = ln_w(j).exp();
        sum += term(j);
        mass += w;
        j += 1.0;
        if j > peak + 10_000.0 {
            break;
        }
    }
    sum
}

/// f = p₀f₀ + (1 − p₀)f_A.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureScenario {
    pub p0: f64,
    pub null: ParametricDensity,
    pub alternative: Component,
    pub label: String,
}

impl MixtureScenario {
    /// Checks 0 < p₀ ≤ 1 and that both components integrate to 1.
    pub fn new(p0: f64, null: ParametricDensity, alternative: Component, label: &str) -> Result<Self> {
        if !(p0 > 0.0 && p0 <= 1.0) {
            return Err(Error::Domain { what: "null proportion", value: p0 });
        }
        null.validate()?;
        alternative.validate()?;
        let s = Self { p0, null, alternative, label: label.to_string() };
        for (name, c) in [("null", Component::Parametric(null)), ("alternative", alternative)] {
            let mass = total_mass(&c);
            if (mass - 1.0).abs() > 1e-6 {
                return Err(Error::Invalid(format!("{name} density integrates to {mass}")));
            }
        }
        Ok(s)
    }

    /// N(0.2, 1.2²) null against a N(3, 1.2²) alternative.
    pub fn normal_shift(p0: f64) -> Result<Self> {
        Self::new(
            p0,
            ParametricDensity::Normal { mean: 0.2, var: 1.44 },
            Component::Parametric(ParametricDensity::Normal { mean: 3.0, var: 1.44 }),
            "normal",
        )
    }

    /// 0.8χ²(3) null against a noncentral χ²(3, 3) alternative.
    pub fn chisq_noncentral(p0: f64) -> Result<Self> {
        Self::new(
            p0,
            ParametricDensity::ScaledChiSq { scale: 0.8, df: 3.0 },
            Component::NoncentralChiSq { df: 3.0, noncentrality: 3.0 },
            "chisq",
        )
    }

    pub fn with_p0(&self, p0: f64) -> Result<Self> {
        Self::new(p0, self.null, self.alternative, &self.label)
    }

    pub fn null_pdf(&self, t: f64) -> f64 {
        self.null.pdf(t)
    }

    pub fn alternative_pdf(&self, t: f64) -> f64 {
        self.alternative.pdf(t)
    }

    /// Mixture density.
    pub fn pdf(&self, t: f64) -> f64 {
        let alt = if self.p0 < 1.0 { (1.0 - self.p0) * self.alternative.pdf(t) } else { 0.0 };
        self.p0 * self.null.pdf(t) + alt
    }

    /// p₀f₀(t)/f(t).
    pub fn local_fdr(&self, t: f64) -> f64 {
        let f = self.pdf(t);
        if f > 0.0 {
            self.p0 * self.null.pdf(t) / f
        } else {
            1.0
        }
    }

    /// One draw and whether it came from the null.
    pub fn sample_labeled<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, bool) {
        if self.p0 >= 1.0 || rng.random::<f64>() < self.p0 {
            (Component::Parametric(self.null).sample(rng), true)
        } else {
            (self.alternative.sample(rng), false)
        }
    }
}

fn total_mass(c: &Component) -> f64 {
    let tol = 1e-10;
    if c.positive_support() {
        quad::integrate_to_infinity(|t| c.pdf(t), 0.0, tol)
    } else {
        quad::integrate_real_line(|t| c.pdf(t), tol)
    }
}
