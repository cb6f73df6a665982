//! Numerical kernels: log-gamma, digamma, distribution functions with
//! quantiles, and the orthogonal polynomials used by the correlation model.

use statrs::function::{beta, erf, gamma};

use crate::error::{check_finite, check_positive, Error, Result};

/// ln Γ(z) for z > 0.
pub fn log_gamma(z: f64) -> Result<f64> {
    check_positive("log_gamma argument", z)?;
    Ok(gamma::ln_gamma(z))
}

/// Ψ(z) = d/dz ln Γ(z) for z > 0.
pub fn digamma(z: f64) -> Result<f64> {
    check_positive("digamma argument", z)?;
    Ok(gamma::digamma(z))
}

/// Continuous distributions needed for quantile transforms and null densities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Normal { mean: f64, var: f64 },
    ChiSq { df: f64 },
    /// `scale` times a χ²(`df`) variable.
    ScaledChiSq { scale: f64, df: f64 },
    StudentT { df: f64 },
    FisherF { d1: f64, d2: f64 },
}

/// Which direction [`cdf_and_quantile`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Cdf,
    Quantile,
}

/// Dispatches to [`Distribution::cdf`] or [`Distribution::quantile`].
pub fn cdf_and_quantile(dist: Distribution, mode: Mode, x: f64) -> Result<f64> {
    match mode {
        Mode::Cdf => dist.cdf(x),
        Mode::Quantile => dist.quantile(x),
    }
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Distribution::Normal { mean, var } => {
                check_finite("normal mean", mean)?;
                check_positive("normal variance", var)
            }
            Distribution::ChiSq { df } => check_positive("chi-square df", df),
            Distribution::ScaledChiSq { scale, df } => {
                check_positive("chi-square scale", scale)?;
                check_positive("chi-square df", df)
            }
            Distribution::StudentT { df } => check_positive("t df", df),
            Distribution::FisherF { d1, d2 } => {
                check_positive("F numerator df", d1)?;
                check_positive("F denominator df", d2)
            }
        }
    }

    fn positive_support(&self) -> bool {
        matches!(
            self,
            Distribution::ChiSq { .. } | Distribution::ScaledChiSq { .. } | Distribution::FisherF { .. }
        )
    }

    /// P(T ≤ x).
    pub fn cdf(&self, x: f64) -> Result<f64> {
        self.validate()?;
        if x.is_nan() {
            return Err(Error::Domain { what: "cdf argument", value: x });
        }
        Ok(self.cdf_unchecked(x))
    }

    /// P(T > x), computed directly so upper tails keep full relative precision.
    pub fn sf(&self, x: f64) -> Result<f64> {
        self.validate()?;
        if x.is_nan() {
            return Err(Error::Domain { what: "sf argument", value: x });
        }
        Ok(self.sf_unchecked(x))
    }

    pub fn pdf(&self, x: f64) -> Result<f64> {
        self.validate()?;
        if x.is_nan() {
            return Err(Error::Domain { what: "pdf argument", value: x });
        }
        Ok(self.pdf_unchecked(x))
    }

    /// Inverse of the cdf for p in (0, 1).
    pub fn quantile(&self, p: f64) -> Result<f64> {
        self.validate()?;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain { what: "quantile probability", value: p });
        }
        if p > 0.5 {
            self.invert(1.0 - p, true)
        } else {
            self.invert(p, false)
        }
    }

    /// Inverse of the survival function for q in (0, 1).
    pub fn quantile_upper(&self, q: f64) -> Result<f64> {
        self.validate()?;
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain { what: "upper-tail probability", value: q });
        }
        if q > 0.5 {
            self.invert(1.0 - q, false)
        } else {
            self.invert(q, true)
        }
    }

    fn cdf_unchecked(&self, x: f64) -> f64 {
        match *self {
            Distribution::Normal { mean, var } => {
                0.5 * erf::erfc(-(x - mean) / (2.0 * var).sqrt())
            }
            Distribution::ChiSq { df } => chisq_lower(df, x),
            Distribution::ScaledChiSq { scale, df } => chisq_lower(df, x / scale),
            Distribution::StudentT { df } => {
                let tail = student_two_sided_half(df, x);
                if x > 0.0 {
                    1.0 - tail
                } else {
                    tail
                }
            }
            Distribution::FisherF { d1, d2 } => {
                if x <= 0.0 {
                    0.0
                } else if x.is_infinite() {
                    1.0
                } else {
                    beta::beta_reg(0.5 * d1, 0.5 * d2, d1 * x / (d1 * x + d2))
                }
            }
        }
    }

    fn sf_unchecked(&self, x: f64) -> f64 {
        match *self {
            Distribution::Normal { mean, var } => 0.5 * erf::erfc((x - mean) / (2.0 * var).sqrt()),
            Distribution::ChiSq { df } => chisq_upper(df, x),
            Distribution::ScaledChiSq { scale, df } => chisq_upper(df, x / scale),
            Distribution::StudentT { df } => {
                let tail = student_two_sided_half(df, x);
                if x > 0.0 {
                    tail
                } else {
                    1.0 - tail
                }
            }
            Distribution::FisherF { d1, d2 } => {
                if x <= 0.0 {
                    1.0
                } else if x.is_infinite() {
                    0.0
                } else {
                    beta::beta_reg(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * x))
                }
            }
        }
    }

    fn pdf_unchecked(&self, x: f64) -> f64 {
        match *self {
            Distribution::Normal { mean, var } => {
                let z = x - mean;
                (-0.5 * z * z / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
            }
            Distribution::ChiSq { df } => chisq_pdf(df, x),
            Distribution::ScaledChiSq { scale, df } => chisq_pdf(df, x / scale) / scale,
            Distribution::StudentT { df } => {
                let ln = gamma::ln_gamma(0.5 * (df + 1.0))
                    - gamma::ln_gamma(0.5 * df)
                    - 0.5 * (df * std::f64::consts::PI).ln()
                    - 0.5 * (df + 1.0) * (x * x / df).ln_1p();
                ln.exp()
            }
            Distribution::FisherF { d1, d2 } => {
                if x < 0.0 || x.is_infinite() {
                    return 0.0;
                }
                if x == 0.0 {
                    return if d1 < 2.0 {
                        f64::INFINITY
                    } else if d1 == 2.0 {
                        1.0
                    } else {
                        0.0
                    };
                }
                let ln = 0.5 * d1 * (d1 / d2).ln() + (0.5 * d1 - 1.0) * x.ln()
                    - 0.5 * (d1 + d2) * (d1 * x / d2).ln_1p()
                    - ln_beta(0.5 * d1, 0.5 * d2);
                ln.exp()
            }
        }
    }

    fn initial_guess(&self, p: f64, upper: bool) -> f64 {
        let lower_p = if upper { 1.0 - p } else { p };
        let z = approx_normal_quantile(lower_p);
        match *self {
            Distribution::Normal { mean, var } => mean + var.sqrt() * z,
            Distribution::ChiSq { df } => wilson_hilferty(df, z),
            Distribution::ScaledChiSq { scale, df } => scale * wilson_hilferty(df, z),
            Distribution::StudentT { .. } => z,
            Distribution::FisherF { d1, .. } => wilson_hilferty(d1, z) / d1,
        }
    }

    /// Safeguarded Newton iteration. `upper` selects solving sf(x) = target,
    /// otherwise cdf(x) = target; target is at most one half.
    fn invert(&self, target: f64, upper: bool) -> Result<f64> {
        let resid = |x: f64| {
            if upper {
                target - self.sf_unchecked(x)
            } else {
                self.cdf_unchecked(x) - target
            }
        };
        let guess = self.initial_guess(target, upper);
        let (mut lo, mut hi);
        if self.positive_support() {
            lo = 0.0;
            hi = guess.max(1.0);
            let mut n = 0;
            while resid(hi) <= 0.0 {
                lo = hi;
                hi *= 2.0;
                n += 1;
                if n > 2100 {
                    return Err(Error::Domain { what: "quantile bracket", value: target });
                }
            }
        } else {
            let mut step = guess.abs().max(1.0);
            lo = guess - step;
            while resid(lo) >= 0.0 {
                step *= 2.0;
                lo = guess - step;
                if !lo.is_finite() {
                    return Err(Error::Domain { what: "quantile bracket", value: target });
                }
            }
            step = guess.abs().max(1.0);
            hi = guess + step;
            while resid(hi) <= 0.0 {
                step *= 2.0;
                hi = guess + step;
                if !hi.is_finite() {
                    return Err(Error::Domain { what: "quantile bracket", value: target });
                }
            }
        }
        let mut x = if guess > lo && guess < hi { guess } else { 0.5 * (lo + hi) };
        for _ in 0..400 {
            let r = resid(x);
            if r == 0.0 {
                return Ok(x);
            }
            if r < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let d = self.pdf_unchecked(x);
            let newton = x - r / d;
            let next = if d > 0.0 && newton.is_finite() && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            let scale = next.abs().max(f64::MIN_POSITIVE);
            if (next - x).abs() <= 4.0 * f64::EPSILON * scale
                || (hi - lo) <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs())
            {
                return Ok(next);
            }
            x = next;
        }
        Ok(x)
    }
}

fn chisq_lower(df: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x.is_infinite() {
        1.0
    } else {
        gamma::gamma_lr(0.5 * df, 0.5 * x)
    }
}

fn chisq_upper(df: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x.is_infinite() {
        0.0
    } else {
        gamma::gamma_ur(0.5 * df, 0.5 * x)
    }
}

fn chisq_pdf(df: f64, x: f64) -> f64 {
    if x < 0.0 || x.is_infinite() {
        return 0.0;
    }
    if x == 0.0 {
        return if df < 2.0 {
            f64::INFINITY
        } else if df == 2.0 {
            0.5
        } else {
            0.0
        };
    }
    let k = 0.5 * df;
    ((k - 1.0) * x.ln() - 0.5 * x - k * std::f64::consts::LN_2 - gamma::ln_gamma(k)).exp()
}

/// P(T > |x|) for a Student t variable.
fn student_two_sided_half(df: f64, x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    0.5 * beta::beta_reg(0.5 * df, 0.5, df / (df + x * x))
}

fn ln_beta(a: f64, b: f64) -> f64 {
    gamma::ln_gamma(a) + gamma::ln_gamma(b) - gamma::ln_gamma(a + b)
}

/// Rational approximation, good to about 5e-4; only a starting point.
fn approx_normal_quantile(p: f64) -> f64 {
    let q = p.min(1.0 - p).max(1e-300);
    let t = (-2.0 * q.ln()).sqrt();
    let z = t - (2.515517 + 0.802853 * t + 0.010328 * t * t)
        / (1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t);
    if p < 0.5 {
        -z
    } else {
        z
    }
}

fn wilson_hilferty(df: f64, z: f64) -> f64 {
    let c = 2.0 / (9.0 * df);
    let v = 1.0 - c + z * c.sqrt();
    (df * v * v * v).max(1e-3 * df)
}

/// Orthogonal polynomial systems of the Lancaster expansions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolynomialFamily {
    /// Probabilists' Hermite: H₀ = 1, H₁ = t, H₂ = t² − 1.
    Hermite,
    /// Generalized Laguerre scaled by n!, so P₁ = −t + α + 1 and
    /// P₂ = t² − 2(α + 2)t + (α + 1)(α + 2).
    GeneralizedLaguerre { alpha: f64 },
}

impl PolynomialFamily {
    /// The Laguerre system orthogonal under a χ²(ν) null written on the t/2 scale.
    pub fn for_chisq(df: f64) -> Self {
        PolynomialFamily::GeneralizedLaguerre { alpha: 0.5 * df - 1.0 }
    }

    /// E[P_n(T)²] under the weight the family is orthogonal for
    /// (standard normal, or Gamma(α + 1, 1)).
    pub fn squared_norm(&self, n: usize) -> f64 {
        let ln_fact = gamma::ln_gamma(n as f64 + 1.0);
        match *self {
            PolynomialFamily::Hermite => ln_fact.exp(),
            PolynomialFamily::GeneralizedLaguerre { alpha } => (ln_fact
                + gamma::ln_gamma(n as f64 + alpha + 1.0)
                - gamma::ln_gamma(alpha + 1.0))
            .exp(),
        }
    }
}

/// n-th polynomial of the family at t, by three-term recurrence.
pub fn eval_polynomial(family: PolynomialFamily, n: usize, t: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = match family {
        PolynomialFamily::Hermite => t,
        PolynomialFamily::GeneralizedLaguerre { alpha } => alpha + 1.0 - t,
    };
    for k in 1..n {
        let kf = k as f64;
        let next = match family {
            PolynomialFamily::Hermite => t * cur - kf * prev,
            PolynomialFamily::GeneralizedLaguerre { alpha } => {
                (2.0 * kf + 1.0 + alpha - t) * cur - kf * (kf + alpha) * prev
            }
        };
        prev = cur;
        cur = next;
    }
    cur
}

/// Unit-norm polynomials ℓ₀ … ℓ_{n_max} at t. The stable normalized
/// recurrence avoids the factorial growth of the raw polynomials.
pub fn eval_orthonormal_upto(family: PolynomialFamily, n_max: usize, t: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(1.0);
    if n_max == 0 {
        return out;
    }
    match family {
        PolynomialFamily::Hermite => {
            out.push(t);
            for n in 1..n_max {
                let nf = n as f64;
                let next = (t * out[n] - nf.sqrt() * out[n - 1]) / (nf + 1.0).sqrt();
                out.push(next);
            }
        }
        PolynomialFamily::GeneralizedLaguerre { alpha } => {
            out.push((alpha + 1.0 - t) / (alpha + 1.0).sqrt());
            for n in 1..n_max {
                let nf = n as f64;
                let next = ((2.0 * nf + 1.0 + alpha - t) * out[n]
                    - (nf * (nf + alpha)).sqrt() * out[n - 1])
                    / ((nf + 1.0) * (nf + 1.0 + alpha)).sqrt();
                out.push(next);
            }
        }
    }
    out
}
