//! Effect of correlation between statistics on the bin-count covariance:
//! Lancaster expansions, the exact covariance decomposition, and the
//! polynomial "wing" directions along which correlation inflates it.

use nalgebra::{DMatrix, DVector};

use crate::covariance::{multinomial_matrix, symmetrize, BinCovariance};
use crate::error::{Error, Result};
use crate::expfam::ParametricDensity;
use crate::nullfit::NullFit;
use crate::special::{eval_orthonormal_upto, PolynomialFamily};

/// Raw moments E(ρ), E(ρ²), … of the pairwise correlations.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoMoments {
    moments: Vec<f64>,
}

impl RhoMoments {
    pub fn new(moments: Vec<f64>) -> Result<Self> {
        for (i, &m) in moments.iter().enumerate() {
            crate::error::check_finite("correlation moment", m)?;
            if m.abs() > 1.0 {
                return Err(Error::Domain { what: "correlation moment", value: m });
            }
            if i % 2 == 1 && m < 0.0 {
                return Err(Error::Domain { what: "even correlation moment", value: m });
            }
        }
        if moments.len() >= 2 && moments[1] < moments[0] * moments[0] - 1e-15 {
            return Err(Error::Invalid(format!(
                "E(rho^2) = {} below E(rho)^2 = {}",
                moments[1],
                moments[0] * moments[0]
            )));
        }
        Ok(Self { moments })
    }

    /// Moments of a point mass at ρ.
    pub fn constant(rho: f64, n_max: usize) -> Result<Self> {
        Self::new((1..=n_max).map(|n| rho.powi(n as i32)).collect())
    }

    /// Moments of a discrete distribution over correlations.
    pub fn discrete(points: &[(f64, f64)], n_max: usize) -> Result<Self> {
        let total: f64 = points.iter().map(|p| p.1).sum();
        Self::new(
            (1..=n_max)
                .map(|n| points.iter().map(|&(r, w)| w * r.powi(n as i32)).sum::<f64>() / total)
                .collect(),
        )
    }

    pub fn n_max(&self) -> usize {
        self.moments.len()
    }

    /// E(ρⁿ) for n ≥ 1.
    pub fn get(&self, n: usize) -> f64 {
        self.moments[n - 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.moments
    }
}

/// Default truncation order for δ.
pub const DEFAULT_ORDER: usize = 8;

/// Orthonormal polynomials of the null, ℓ₀(t), …, ℓ_{n_max}(t); Hermite in
/// the standardised argument for a normal null, generalised Laguerre in
/// t/(2a) with α = ν/2 − 1 for aχ²(ν). Signs make the leading coefficient
/// positive in t.
pub fn lancaster_polynomials(f0: &ParametricDensity, n_max: usize, t: f64) -> Vec<f64> {
    match *f0 {
        ParametricDensity::Normal { mean, var } => {
            eval_orthonormal_upto(PolynomialFamily::Hermite, n_max, (t - mean) / var.sqrt())
        }
        ParametricDensity::ScaledChiSq { scale, df } => {
            let mut v = eval_orthonormal_upto(PolynomialFamily::for_chisq(df), n_max, t / (2.0 * scale));
            v.iter_mut().skip(1).step_by(2).for_each(|x| *x = -*x);
            v
        }
    }
}

/// f₀(t_i)f₀(t_j) Σ_{n ≤ n_max} ρⁿ ℓ_n(t_i)ℓ_n(t_j).
pub fn lancaster_density(f0: &ParametricDensity, rho: f64, ti: f64, tj: f64, n_max: usize) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Domain { what: "correlation", value: rho });
    }
    f0.validate()?;
    if !f0.in_support(ti) || !f0.in_support(tj) {
        return Ok(0.0);
    }
    let (li, lj) = (lancaster_polynomials(f0, n_max, ti), lancaster_polynomials(f0, n_max, tj));
    let mut sum = 0.0;
    let mut r = 1.0;
    for n in 0..=n_max {
        sum += r * li[n] * lj[n];
        r *= rho;
    }
    Ok(f0.pdf(ti) * f0.pdf(tj) * sum)
}

/// δ = Σ_{n=1}^{n_max} E(ρⁿ) ℓ_n(t)ℓ_n(t)' with the ratio of the last
/// retained term's Frobenius norm to that of the sum.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaMatrix {
    pub matrix: DMatrix<f64>,
    pub truncation_ratio: f64,
}

pub fn delta_matrix(f0: &ParametricDensity, centers: &[f64], moments: &RhoMoments) -> Result<DeltaMatrix> {
    f0.validate()?;
    let k = centers.len();
    let n_max = moments.n_max();
    let polys: Vec<Vec<f64>> = centers
        .iter()
        .map(|&t| if f0.in_support(t) { lancaster_polynomials(f0, n_max, t) } else { vec![0.0; n_max + 1] })
        .collect();
    let mut m = DMatrix::zeros(k, k);
    let mut last = 0.0;
    for n in 1..=n_max {
        let l = DVector::from_iterator(k, polys.iter().map(|p| p[n]));
        let term = &l * l.transpose() * moments.get(n);
        last = term.norm();
        m += term;
    }
    let total = m.norm();
    Ok(DeltaMatrix { matrix: m, truncation_ratio: if total > 0.0 { last / total } else { 0.0 } })
}

/// Bin-count covariance under correlation:
/// [Diag(λ) − λλ'/N] + (1 − 1/N) Diag(λ) δ Diag(λ).
pub fn correlated_count_cov(
    lambda: &[f64],
    total: f64,
    f0: &ParametricDensity,
    centers: &[f64],
    moments: &RhoMoments,
) -> Result<DMatrix<f64>> {
    if lambda.len() != centers.len() {
        return Err(Error::Ragged { row: 0, expected: centers.len(), found: lambda.len() });
    }
    if let Some(i) = lambda.iter().position(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(Error::Domain { what: "expected bin count", value: lambda[i] });
    }
    let delta = delta_matrix(f0, centers, moments)?.matrix;
    let k = lambda.len();
    let corr = DMatrix::from_fn(k, k, |i, j| lambda[i] * delta[(i, j)] * lambda[j]);
    Ok(symmetrize(&(multinomial_matrix(lambda, total) + corr * (1.0 - 1.0 / total))))
}

/// Order-n wing vector w_n = Diag(λ) ℓ_n(t).
#[derive(Debug, Clone, PartialEq)]
pub struct WingVector {
    pub order: usize,
    pub vector: Vec<f64>,
}

impl WingVector {
    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn unit(&self) -> Result<Vec<f64>> {
        let n = self.norm();
        if !(n > 0.0) {
            return Err(Error::Singular("wing vector"));
        }
        Ok(self.vector.iter().map(|v| v / n).collect())
    }
}

pub fn wing_vector(lambda: &[f64], f0: &ParametricDensity, centers: &[f64], order: usize) -> Result<WingVector> {
    if order == 0 {
        return Err(Error::Invalid("wing order must be at least 1".into()));
    }
    if lambda.len() != centers.len() {
        return Err(Error::Ragged { row: 0, expected: centers.len(), found: lambda.len() });
    }
    f0.validate()?;
    let vector = lambda
        .iter()
        .zip(centers)
        .map(|(&l, &t)| if f0.in_support(t) { l * lancaster_polynomials(f0, order, t)[order] } else { 0.0 })
        .collect();
    Ok(WingVector { order, vector })
}

/// Moment estimate from a replicate covariance and its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationEstimate {
    /// d̂₁/‖ŵ‖²; biased upward by the sorting of d̂₁.
    pub estimate: f64,
    pub top_eigenvalue: f64,
    pub second_eigenvalue: f64,
    /// d̂₂/d̂₁.
    pub second_ratio: f64,
    /// Top eigenvector, signed to agree with the wing vector.
    pub eigenvector: Vec<f64>,
    pub wing: WingVector,
    /// |cos| between the top eigenvector and the wing vector.
    pub cosine: f64,
}

/// Expected null counts NΔ f̂₀(t_k) of a fit.
pub fn null_expected_counts(fit: &NullFit) -> Result<Vec<f64>> {
    let f0 = fit.null_shape()?;
    let scale = fit.design.total * fit.design.bin_width;
    Ok(fit.design.centers.iter().map(|&t| if f0.in_support(t) { scale * f0.pdf(t) } else { 0.0 }).collect())
}

/// Top eigenpairs of a symmetric matrix, descending. Rows and columns that
/// are entirely zero (bins empty in every replicate) are split off first:
/// they only contribute zero eigenvalues, and long runs of them can stall
/// the QR iteration into NaNs.
pub fn top_eigenpairs(m: &DMatrix<f64>, count: usize) -> Vec<(f64, DVector<f64>)> {
    let n = m.nrows();
    let active: Vec<usize> = (0..n).filter(|&i| (0..n).any(|j| m[(i, j)] != 0.0 || m[(j, i)] != 0.0)).collect();
    let sub = symmetrize(&DMatrix::from_fn(active.len(), active.len(), |i, j| m[(active[i], active[j])]));
    let mut pairs: Vec<(f64, DVector<f64>)> = if active.is_empty() {
        Vec::new()
    } else {
        let eig = sub.symmetric_eigen();
        (0..active.len())
            .map(|c| {
                let mut v = DVector::zeros(n);
                for (r, &i) in active.iter().enumerate() {
                    v[i] = eig.eigenvectors[(r, c)];
                }
                (eig.eigenvalues[c], v)
            })
            .collect()
    };
    // Zero block: unit vectors on the inactive coordinates.
    for i in (0..n).filter(|i| !active.contains(i)) {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        pairs.push((0.0, v));
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs.truncate(count);
    pairs
}

/// E(ρⁿ) from the rank-one model V ≈ E(ρⁿ) ŵ_n ŵ_n'.
pub fn estimate_correlation_moment(perm_cov: &BinCovariance, fit: &NullFit, order: usize) -> Result<CorrelationEstimate> {
    let k = fit.design.num_bins();
    if perm_cov.dim() != k {
        return Err(Error::Ragged { row: 0, expected: k, found: perm_cov.dim() });
    }
    let lambda = null_expected_counts(fit)?;
    let wing = wing_vector(&lambda, &fit.null_shape()?, &fit.design.centers, order)?;
    let norm2 = wing.norm().powi(2);
    if !(norm2 > 0.0) {
        return Err(Error::Singular("wing vector"));
    }
    let unit = wing.unit()?;
    let pairs = top_eigenpairs(&perm_cov.matrix, 2);
    if pairs.iter().any(|(d, v)| !d.is_finite() || v.iter().any(|x| !x.is_finite())) {
        return Err(Error::Singular("eigen decomposition of the replicate covariance"));
    }
    let (d1, v1) = pairs[0].clone();
    let d2 = pairs.get(1).map(|p| p.0).unwrap_or(0.0);
    let dot: f64 = v1.iter().zip(&unit).map(|(a, b)| a * b).sum();
    let sign = if dot < 0.0 { -1.0 } else { 1.0 };
    Ok(CorrelationEstimate {
        estimate: d1 / norm2,
        top_eigenvalue: d1,
        second_eigenvalue: d2,
        second_ratio: if d1 > 0.0 { d2 / d1 } else { f64::NAN },
        eigenvector: v1.iter().map(|v| v * sign).collect(),
        wing,
        cosine: dot.abs(),
    })
}

/// E(ρ) via the order-1 wing vector.
pub fn estimate_mean_correlation(perm_cov: &BinCovariance, fit: &NullFit) -> Result<CorrelationEstimate> {
    estimate_correlation_moment(perm_cov, fit, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::CovarianceSource;
    use crate::expfam::{FamilyKind, FamilySpec};
    use crate::histogram::{FitMask, HistogramSpec};
    use crate::nullfit::{fit, DesignMatrix};
    use crate::special::log_gamma;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const STD: ParametricDensity = ParametricDensity::Normal { mean: 0.0, var: 1.0 };

    fn bivariate_normal(r: f64, x: f64, y: f64) -> f64 {
        let d = 1.0 - r * r;
        (-(x * x - 2.0 * r * x * y + y * y) / (2.0 * d)).exp() / (2.0 * PI * d.sqrt())
    }

    #[test]
    fn independence_is_product() {
        for f0 in [STD, ParametricDensity::ScaledChiSq { scale: 0.8, df: 3.0 }] {
            let v = lancaster_density(&f0, 0.0, 0.7, 1.9, 10).unwrap();
            assert!((v - f0.pdf(0.7) * f0.pdf(1.9)).abs() < 1e-15);
        }
        assert!(lancaster_density(&STD, 1.0, 0.0, 0.0, 3).is_err());
    }

    #[test]
    fn mehler_formula() {
        let mut sup: f64 = 0.0;
        for i in 0..=30 {
            for j in 0..=30 {
                let (x, y) = (-3.0 + 0.2 * i as f64, -3.0 + 0.2 * j as f64);
                let a = lancaster_density(&STD, 0.3, x, y, 20).unwrap();
                sup = sup.max((a - bivariate_normal(0.3, x, y)).abs());
            }
        }
        assert!(sup < 1e-6, "{sup}");
    }

    #[test]
    fn marginals_are_null() {
        let chi = ParametricDensity::ScaledChiSq { scale: 1.0, df: 4.0 };
        for (f0, t) in [(STD, 0.8), (chi, 3.0)] {
            let m = if let ParametricDensity::Normal { .. } = f0 {
                crate::quad::integrate_real_line(|u| lancaster_density(&f0, 0.4, t, u, 12).unwrap(), 1e-11)
            } else {
                crate::quad::integrate_to_infinity(|u| lancaster_density(&f0, 0.4, t, u, 12).unwrap(), 0.0, 1e-11)
            };
            assert!((m - f0.pdf(t)).abs() < 1e-8, "{m} {}", f0.pdf(t));
        }
    }

    fn bivariate_chisq2(r2: f64, x: f64, y: f64) -> f64 {
        // Kibble's bivariate exponential form for χ²(2) margins, squared correlation r2.
        let d = 1.0 - r2;
        let z = (r2 * x * y).sqrt() / d;
        // I₀ by series
        let mut term = 1.0;
        let mut s = 1.0;
        for k in 1..200 {
            term *= (z / 2.0) * (z / 2.0) / (k * k) as f64;
            s += term;
        }
        (-(x + y) / (2.0 * d)).exp() / (4.0 * d) * s
    }

    #[test]
    fn chisq_expansion_matches_bivariate_gamma() {
        let f0 = ParametricDensity::ScaledChiSq { scale: 1.0, df: 2.0 };
        for (x, y) in [(0.5, 1.0), (2.0, 3.0), (4.0, 0.7)] {
            let a = lancaster_density(&f0, 0.3, x, y, 40).unwrap();
            let b = bivariate_chisq2(0.3, x, y);
            assert!((a - b).abs() < 1e-10, "{a} {b}");
        }
    }

    #[test]
    fn delta_matches_integral_representation() {
        // Two-point correlation distribution; R(ρ) from the closed form.
        let pts = [(0.2, 0.7), (-0.1, 0.3)];
        let moments = RhoMoments::discrete(&pts, 30).unwrap();
        let centers = [-1.5, -0.4, 0.3, 1.2];
        let d = delta_matrix(&STD, &centers, &moments).unwrap();
        for (i, &x) in centers.iter().enumerate() {
            for (j, &y) in centers.iter().enumerate() {
                let r: f64 = pts
                    .iter()
                    .map(|&(rho, w)| w * (bivariate_normal(rho, x, y) / (STD.pdf(x) * STD.pdf(y)) - 1.0))
                    .sum();
                assert!((d.matrix[(i, j)] - r).abs() < 1e-6);
            }
        }
        assert!(d.truncation_ratio < 1e-12);
    }

    #[test]
    fn zero_moments_give_multinomial() {
        let lam = [3.0, 10.0, 20.0, 9.0, 1.0];
        let c = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let m = correlated_count_cov(&lam, 50.0, &STD, &c, &RhoMoments::new(vec![0.0; 4]).unwrap()).unwrap();
        assert_eq!(m, multinomial_matrix(&lam, 50.0));
    }

    #[test]
    fn normal_second_order_form() {
        let c: Vec<f64> = (0..9).map(|i| -2.0 + 0.5 * i as f64).collect();
        let lam: Vec<f64> = c.iter().map(|&t| 1000.0 * 0.5 * STD.pdf(t)).collect();
        let e2 = 0.04;
        let m = correlated_count_cov(&lam, 1000.0, &STD, &c, &RhoMoments::new(vec![0.0, e2]).unwrap()).unwrap();
        let w: Vec<f64> = lam.iter().zip(&c).map(|(l, t)| l * (t * t - 1.0) / 2f64.sqrt()).collect();
        let w = DVector::from_vec(w);
        let direct = multinomial_matrix(&lam, 1000.0) + &w * w.transpose() * ((1.0 - 1e-3) * e2);
        assert!((m - direct).amax() < 1e-12);
    }

    #[test]
    fn chisq_first_order_form() {
        let (a, nu) = (0.8, 3.0);
        let f0 = ParametricDensity::ScaledChiSq { scale: a, df: nu };
        let c: Vec<f64> = (0..12).map(|i| 0.25 + 0.5 * i as f64).collect();
        let lam: Vec<f64> = c.iter().map(|&t| 500.0 * 0.5 * f0.pdf(t)).collect();
        let e1 = 0.01;
        let m = correlated_count_cov(&lam, 500.0, &f0, &c, &RhoMoments::new(vec![e1]).unwrap()).unwrap();
        let k = (log_gamma(nu / 2.0).unwrap() - log_gamma(nu / 2.0 + 1.0).unwrap()).exp().sqrt();
        let w = DVector::from_iterator(12, lam.iter().zip(&c).map(|(l, t)| l * k * (t / (2.0 * a) - nu / 2.0)));
        let direct = multinomial_matrix(&lam, 500.0) + &w * w.transpose() * ((1.0 - 1.0 / 500.0) * e1);
        assert!((&m - direct).amax() < 1e-12 * m.amax());
        let wing = wing_vector(&lam, &f0, &c, 1).unwrap();
        for (x, y) in wing.vector.iter().zip(w.iter()) {
            assert!((x - y).abs() < 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn wing_zero_crossings() {
        let w = wing_vector(&[5.0, 5.0, 5.0], &STD, &[-1.0, 0.0, 1.0], 2).unwrap();
        assert!(w.vector[0].abs() < 1e-15 && w.vector[2].abs() < 1e-15 && w.vector[1] < 0.0);
        let chi = ParametricDensity::ScaledChiSq { scale: 1.0, df: 2.0 };
        let w = wing_vector(&[1.0; 3], &chi, &[1.0, 2.0, 3.0], 1).unwrap();
        assert!(w.vector[0] < 0.0 && w.vector[1].abs() < 1e-15 && w.vector[2] > 0.0);
        assert!(wing_vector(&[1.0], &STD, &[0.0], 0).is_err());
    }

    #[test]
    fn moments_validation() {
        assert!(RhoMoments::new(vec![0.5, 0.2]).is_err());
        assert!(RhoMoments::new(vec![0.0, -0.1]).is_err());
        assert!(RhoMoments::new(vec![1.5]).is_err());
        assert!(RhoMoments::new(vec![-0.2, 0.05, -0.01]).is_ok());
    }

    #[test]
    fn rank_one_identity() {
        let spec = HistogramSpec::new(0.0, 0.5, 20).unwrap();
        let f0 = ParametricDensity::ScaledChiSq { scale: 1.0, df: 4.0 };
        let y: Vec<f64> = spec.centers().iter().map(|&t| (5000.0 * 0.5 * f0.pdf(t)).round()).collect();
        let total: f64 = y.iter().sum();
        let fam = FamilySpec::new(FamilyKind::ChiSqFull).unwrap();
        let dm = DesignMatrix::new(&spec.centers(), 0.5, total, fam, FitMask::from_interval(&spec, 0.0, 6.0).unwrap()).unwrap();
        let f = fit(dm, &y).unwrap();
        let w = wing_vector(&null_expected_counts(&f).unwrap(), &f.null_shape().unwrap(), &f.design.centers, 1).unwrap();
        let wv = DVector::from_vec(w.vector.clone());
        let cov = BinCovariance::new(&wv * wv.transpose() * 0.0123, CovarianceSource::External).unwrap();
        let e = estimate_mean_correlation(&cov, &f).unwrap();
        assert!((e.estimate - 0.0123).abs() < 1e-12);
        assert!((e.cosine - 1.0).abs() < 1e-12);
        assert!(e.second_ratio.abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn lancaster_symmetric_nonnegative(r in -0.5f64..0.5, x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let a = lancaster_density(&STD, r, x, y, 24).unwrap();
            let b = lancaster_density(&STD, r, y, x, 24).unwrap();
            prop_assert!((a - b).abs() < 1e-15);
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn correlated_count_cov_symmetric(e1 in -0.2f64..0.2, extra in 0.0f64..0.1) {
            let c: Vec<f64> = (0..8).map(|i| 0.3 + 0.6 * i as f64).collect();
            let f0 = ParametricDensity::ScaledChiSq { scale: 1.0, df: 3.0 };
            let lam: Vec<f64> = c.iter().map(|&t| 300.0 * f0.pdf(t)).collect();
            let mom = RhoMoments::new(vec![e1, e1 * e1 + extra]).unwrap();
            let m = correlated_count_cov(&lam, 500.0, &f0, &c, &mom).unwrap();
            prop_assert!((&m - m.transpose()).amax() == 0.0);
        }

        #[test]
        fn zero_padding_leaves_top_eigenpairs(seed in 0u64..1000, pad in 1usize..300) {
            use rand::Rng;
            let mut rng = crate::par::stream_rng(seed, &[]);
            let a = DMatrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
            let m = &a * a.transpose();
            let mut padded = DMatrix::zeros(6 + pad, 6 + pad);
            padded.view_mut((pad / 2, pad / 2), (6, 6)).copy_from(&m);
            let small = top_eigenpairs(&m, 2);
            let big = top_eigenpairs(&padded, 2);
            for ((d, v), (e, w)) in small.iter().zip(&big) {
                prop_assert!((d - e).abs() < 1e-10 * d.abs().max(1.0));
                let dot: f64 = v.iter().zip(w.rows(pad / 2, 6).iter()).map(|(x, y)| x * y).sum();
                prop_assert!((dot.abs() - 1.0).abs() < 1e-8);
            }
            prop_assert!(big.iter().all(|(d, v)| d.is_finite() && v.iter().all(|x| x.is_finite())));
        }
    }
}
