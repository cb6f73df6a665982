//! Local and tail false discovery rates from a fitted null, their
//! delta-method covariances and the small-count bias function ζ.

use nalgebra::DMatrix;

use crate::covariance::{eta_sensitivity, symmetrize, BinCovariance};
use crate::error::{Error, Result};
use crate::nullfit::NullFit;

/// Which tail a cumulative rate accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Right,
    Left,
}

/// Half-weighted cumulation: right is `v_k/2 + Σ_{j>k} v_j`, left is the
/// transpose, `v_k/2 + Σ_{j<k} v_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CumulationMatrix {
    pub size: usize,
    pub side: Side,
}

impl CumulationMatrix {
    pub fn new(size: usize, side: Side) -> Self {
        Self { size, side }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.size);
        let mut out = vec![0.0; v.len()];
        let mut acc = 0.0;
        let mut step = |k: usize| {
            out[k] = acc + 0.5 * v[k];
            acc += v[k];
        };
        match self.side {
            Side::Right => (0..v.len()).rev().for_each(&mut step),
            Side::Left => (0..v.len()).for_each(&mut step),
        }
        out
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let k = self.size;
        DMatrix::from_fn(k, k, |i, j| {
            let ahead = match self.side {
                Side::Right => j > i,
                Side::Left => j < i,
            };
            if i == j {
                0.5
            } else if ahead {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// ŷ_k / y_k where y_k > 0.
pub fn local_fdr_from_counts(y: &[f64], yhat: &[f64]) -> Vec<Option<f64>> {
    y.iter().zip(yhat).map(|(&a, &b)| (a > 0.0).then(|| b / a)).collect()
}

/// (Sŷ)_k / (Sy)_k where (Sy)_k > 0.
pub fn tail_fdr_from_counts(y: &[f64], yhat: &[f64], side: Side) -> Vec<Option<f64>> {
    let s = CumulationMatrix::new(y.len(), side);
    let (sy, syhat) = (s.apply(y), s.apply(yhat));
    sy.iter()
        .zip(&syhat)
        .map(|(&a, &b)| (a > 0.0).then(|| (b.ln() - a.ln()).exp()))
        .collect()
}

pub fn local_fdr(fit: &NullFit) -> Vec<Option<f64>> {
    local_fdr_from_counts(&fit.counts, &fit.fitted_counts)
}

pub fn tail_fdr(fit: &NullFit, side: Side) -> Vec<Option<f64>> {
    tail_fdr_from_counts(&fit.counts, &fit.fitted_counts, side)
}

/// ∂ log ŷ/∂y (K × K).
fn log_fitted_sensitivity(fit: &NullFit) -> Result<DMatrix<f64>> {
    Ok(&fit.design.x * eta_sensitivity(fit)?)
}

/// ∂ log fdr̂/∂y = D_y − V⁻¹; rows of undefined bins are zero.
pub fn local_sensitivity(fit: &NullFit) -> Result<DMatrix<f64>> {
    let mut a = log_fitted_sensitivity(fit)?;
    for (k, &y) in fit.counts.iter().enumerate() {
        if y > 0.0 {
            a[(k, k)] -= 1.0 / y;
        } else {
            a.row_mut(k).fill(0.0);
        }
    }
    Ok(a)
}

/// ∂ log Fdr̂/∂y = Û⁻¹SV̂D_y − U⁻¹S (S' on the left); rows with no
/// cumulative count are zero.
pub fn tail_sensitivity(fit: &NullFit, side: Side) -> Result<DMatrix<f64>> {
    let k = fit.counts.len();
    let s = CumulationMatrix::new(k, side).matrix();
    let sy = CumulationMatrix::new(k, side).apply(&fit.counts);
    let syhat = CumulationMatrix::new(k, side).apply(&fit.fitted_counts);
    let mut vdy = log_fitted_sensitivity(fit)?;
    for (j, &v) in fit.fitted_counts.iter().enumerate() {
        vdy.row_mut(j).scale_mut(v);
    }
    let mut b = &s * vdy;
    for i in 0..k {
        if sy[i] > 0.0 && syhat[i] > 0.0 {
            let (u, uhat) = (sy[i], syhat[i]);
            for j in 0..k {
                b[(i, j)] = b[(i, j)] / uhat - s[(i, j)] / u;
            }
        } else {
            b.row_mut(i).fill(0.0);
        }
    }
    Ok(b)
}

/// Covariances of log fdr̂, log Fdr̂_R and log Fdr̂_L.
#[derive(Debug, Clone, PartialEq)]
pub struct FdrCovariances {
    pub local: DMatrix<f64>,
    pub right: DMatrix<f64>,
    pub left: DMatrix<f64>,
}

fn sandwich(a: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(a * v * a.transpose()))
}

pub fn fdr_covariances(fit: &NullFit, vn: &BinCovariance) -> Result<FdrCovariances> {
    let k = fit.counts.len();
    if vn.dim() != k {
        return Err(Error::Ragged { row: 0, expected: k, found: vn.dim() });
    }
    Ok(FdrCovariances {
        local: sandwich(&local_sensitivity(fit)?, &vn.matrix),
        right: sandwich(&tail_sensitivity(fit, Side::Right)?, &vn.matrix),
        left: sandwich(&tail_sensitivity(fit, Side::Left)?, &vn.matrix),
    })
}

/// Pointwise band exp(log x ± z·se); undefined where the estimate is.
pub fn log_band(estimate: &[Option<f64>], log_cov: &DMatrix<f64>, z: f64) -> Vec<Option<(f64, f64)>> {
    estimate
        .iter()
        .enumerate()
        .map(|(k, e)| {
            e.filter(|&v| v > 0.0).map(|v| {
                let se = log_cov[(k, k)].max(0.0).sqrt();
                ((v.ln() - z * se).exp(), (v.ln() + z * se).exp())
            })
        })
        .collect()
}

/// Point where the series gives way to the asymptotic expansion.
pub const ZETA_SWITCH: f64 = 30.0;

/// E(λ/y | y > 0) for y ~ Poisson(λ),
/// `λ/(e^λ − 1) ∫₀^λ (e^u − 1)/u du`.
pub fn zeta(lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) || lambda.is_nan() {
        return Err(Error::Domain { what: "zeta argument", value: lambda });
    }
    if lambda.is_infinite() {
        return Ok(1.0);
    }
    Ok(if lambda <= ZETA_SWITCH { zeta_series(lambda) } else { zeta_asymptotic(lambda) })
}

/// λ Σ_{j≥1} λ^j/(j·j!) / (e^λ − 1).
pub(crate) fn zeta_series(lambda: f64) -> f64 {
    // Terms carry a factor e^{-λ} so they stay O(1) for moderate λ.
    let mut term = (-lambda).exp();
    let mut sum = 0.0;
    let mut j = 1usize;
    loop {
        term *= lambda / j as f64;
        let add = term / j as f64;
        sum += add;
        if j as f64 > lambda && add < 1e-17 * sum {
            break;
        }
        j += 1;
    }
    lambda * sum / (-(-lambda).exp_m1())
}

/// e^λ/(e^λ − 1) Σ_k k!/λ^k − λ(γ + ln λ)/(e^λ − 1), the exponential
/// integral's expansion truncated at its smallest term.
pub(crate) fn zeta_asymptotic(lambda: f64) -> f64 {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1usize;
    while (k as f64) < lambda {
        let next = term * k as f64 / lambda;
        if next >= term || next < 1e-17 {
            break;
        }
        term = next;
        sum += term;
        k += 1;
    }
    let em1 = lambda.exp_m1();
    sum / (-(-lambda).exp_m1()) - lambda * (EULER_GAMMA + lambda.ln()) / em1
}

/// ζ(ŷ_k) per bin: the expected fdr̂ if every statistic were null.
/// Undefined where ŷ_k = 0.
pub fn expected_null_fdr(fit: &NullFit) -> Vec<Option<f64>> {
    fit.fitted_counts.iter().map(|&l| zeta(l).ok()).collect()
}

/// fdr̂_k / ζ(ŷ_k). A rough diagnostic, not a bias correction.
pub fn adjusted_local_fdr(fit: &NullFit) -> Vec<Option<f64>> {
    local_fdr(fit)
        .into_iter()
        .zip(expected_null_fdr(fit))
        .map(|(f, z)| match (f, z) {
            (Some(f), Some(z)) if z > 0.0 => Some(f / z),
            _ => None,
        })
        .collect()
}

/// Bins whose upper band limit lies below ζ(ŷ_k).
pub fn flag_below_null(upper: &[Option<(f64, f64)>], expected: &[Option<f64>]) -> Vec<bool> {
    upper
        .iter()
        .zip(expected)
        .map(|(b, z)| matches!((b, z), (Some((_, hi)), Some(z)) if hi < z))
        .collect()
}

/// exp(X(η̂⁺_∞ − η⁺)) per bin; the multiplicative large-N bias of fdr̂ for
/// bins outside the fitting interval.
pub fn asymptotic_fdr_bias_factor(x: &DMatrix<f64>, eta_shift: &[f64]) -> Result<Vec<f64>> {
    if eta_shift.len() != x.ncols() {
        return Err(Error::Ragged { row: 0, expected: x.ncols(), found: eta_shift.len() });
    }
    Ok((0..x.nrows())
        .map(|k| x.row(k).iter().zip(eta_shift).map(|(a, b)| a * b).sum::<f64>().exp())
        .collect())
}

/// Everything the fdr report needs.
#[derive(Debug, Clone, PartialEq)]
pub struct FdrResult {
    pub local_fdr: Vec<Option<f64>>,
    pub fdr_right: Vec<Option<f64>>,
    pub fdr_left: Vec<Option<f64>>,
    pub log_cov_local: DMatrix<f64>,
    pub log_cov_right: DMatrix<f64>,
    pub log_cov_left: DMatrix<f64>,
    pub zeta_expected_null: Vec<Option<f64>>,
    pub adjusted_local_fdr: Vec<Option<f64>>,
}

impl FdrResult {
    pub fn local_band(&self, z: f64) -> Vec<Option<(f64, f64)>> {
        log_band(&self.local_fdr, &self.log_cov_local, z)
    }

    pub fn right_band(&self, z: f64) -> Vec<Option<(f64, f64)>> {
        log_band(&self.fdr_right, &self.log_cov_right, z)
    }

    pub fn left_band(&self, z: f64) -> Vec<Option<(f64, f64)>> {
        log_band(&self.fdr_left, &self.log_cov_left, z)
    }

    /// Bins whose 95% band on fdr̂ sits wholly below ζ(ŷ_k).
    pub fn significantly_below_null(&self) -> Vec<bool> {
        flag_below_null(&self.local_band(1.959_963_984_540_054), &self.zeta_expected_null)
    }
}

pub fn analyze(fit: &NullFit, vn: &BinCovariance) -> Result<FdrResult> {
    let cov = fdr_covariances(fit, vn)?;
    Ok(FdrResult {
        local_fdr: local_fdr(fit),
        fdr_right: tail_fdr(fit, Side::Right),
        fdr_left: tail_fdr(fit, Side::Left),
        log_cov_local: cov.local,
        log_cov_right: cov.right,
        log_cov_left: cov.left,
        zeta_expected_null: expected_null_fdr(fit),
        adjusted_local_fdr: adjusted_local_fdr(fit),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{multinomial_cov, CovarianceSource};
    use crate::expfam::{FamilyKind, FamilySpec};
    use crate::histogram::{FitMask, HistogramSpec};
    use crate::nullfit::{fit, DesignMatrix};
    use crate::par::stream_rng;
    use proptest::prelude::*;
    use rand_distr::{Distribution as _, Poisson};

    fn zeta_quad(l: f64) -> f64 {
        let i = crate::quad::integrate(|u: f64| if u == 0.0 { 1.0 } else { u.exp_m1() / u }, 0.0, l, 1e-14);
        l / l.exp_m1() * i
    }

    #[test]
    fn zeta_matches_quadrature() {
        for l in [1e-3, 0.01, 0.2346, 1.0, 4.0, 12.0, 29.9] {
            let (a, b) = (zeta(l).unwrap(), zeta_quad(l));
            assert!((a - b).abs() < 1e-12 * b.max(1e-3), "{l}: {a} {b}");
        }
    }

    #[test]
    fn zeta_branches_agree_at_switch() {
        let (s, a) = (zeta_series(ZETA_SWITCH), zeta_asymptotic(ZETA_SWITCH));
        assert!((s - a).abs() < 1e-10, "{s} {a}");
        for l in [40.0, 80.0, 200.0] {
            let q = zeta_quad(l);
            assert!((zeta(l).unwrap() - q).abs() < 1e-10, "{l}");
        }
    }

    #[test]
    fn zeta_examples() {
        assert!((zeta(1.0).unwrap() - 0.767).abs() < 5e-4);
        let z = zeta(0.01).unwrap();
        assert!((z / 0.01 - 1.0).abs() < 0.01);
        assert!((zeta(1e6).unwrap() - 1.0).abs() < 1e-5);
        assert!(zeta(0.0).is_err());
        assert!(zeta(-1.0).is_err());
        // Table-style pairs: adjusted = fdr / ζ(ŷ) with ŷ = fdr·y.
        assert!((0.1173 / zeta(0.1173 * 2.0).unwrap() - 0.5310).abs() < 1e-3);
        assert!((0.2831 / zeta(0.2831 * 3.0).unwrap() - 0.4169).abs() < 1e-3);
    }

    #[test]
    fn zeta_rises_to_a_peak_then_decays_to_one() {
        let mut prev = 0.0;
        let mut l = 0.05;
        while l < 3.7 {
            let z = zeta(l).unwrap();
            assert!(z > prev);
            prev = z;
            l += 0.05;
        }
        let peak = zeta(3.75).unwrap();
        assert!(peak > prev && (peak - 1.32026).abs() < 1e-4);
        let mut prev = peak;
        for l in [3.8, 5.0, 8.0, 15.0, 30.0, 100.0, 1000.0] {
            let z = zeta(l).unwrap();
            assert!(z < prev && z > 1.0);
            prev = z;
        }
    }

    #[test]
    fn zeta_monte_carlo() {
        for (i, l) in [0.5f64, 2.0].into_iter().enumerate() {
            let mut rng = stream_rng(11, &[i as u64]);
            let pois = Poisson::new(l).unwrap();
            let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
            for _ in 0..200_000 {
                let y: f64 = pois.sample(&mut rng);
                if y > 0.0 {
                    let v = l / y;
                    s += v;
                    s2 += v * v;
                    n += 1.0;
                }
            }
            let m = s / n;
            let se = ((s2 / n - m * m) / n).sqrt();
            assert!((m - zeta(l).unwrap()).abs() < 4.0 * se);
        }
    }

    #[test]
    fn cumulation_examples() {
        let y = [4.0, 2.0, 2.0];
        let r = tail_fdr_from_counts(&y, &[4.0, 1.0, 1.0], Side::Right);
        assert!((r[0].unwrap() - 4.0 / 6.0).abs() < 1e-15);
        let s = CumulationMatrix::new(3, Side::Right);
        assert_eq!(s.apply(&y), vec![6.0, 3.0, 1.0]);
        let m = s.matrix();
        assert_eq!(m[(0, 0)], 0.5);
        assert_eq!(m[(0, 2)], 1.0);
        assert_eq!(m[(2, 0)], 0.0);
        let l = CumulationMatrix::new(3, Side::Left).matrix();
        assert_eq!(l, m.transpose());
        assert_eq!(local_fdr_from_counts(&[0.0, 2.0], &[1.0, 1.0]), vec![None, Some(0.5)]);
        assert_eq!(tail_fdr_from_counts(&[1.0, 0.0], &[1.0, 1.0], Side::Right)[1], None);
    }

    fn normal_counts() -> Vec<f64> {
        let mut y: Vec<f64> = (0..24)
            .map(|j| {
                let t = -3.0 + 0.25 * (j as f64 + 0.5);
                (4000.0 * 0.25 * (-(t * t) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()).round()
            })
            .collect();
        y[20] += 12.0;
        y[22] += 9.0;
        y
    }

    fn fitted(y: &[f64]) -> NullFit {
        let spec = HistogramSpec::new(-3.0, 0.25, y.len()).unwrap();
        let fam = FamilySpec::new(FamilyKind::NormalFull).unwrap();
        let mask = FitMask::from_interval(&spec, -1.5, 1.5).unwrap();
        let dm = DesignMatrix::new(&spec.centers(), 0.25, 4000.0, fam, mask).unwrap();
        fit(dm, y).unwrap()
    }

    #[test]
    fn sensitivities_match_refit() {
        let y = normal_counts();
        let f = fitted(&y);
        let a = local_sensitivity(&f).unwrap();
        let br = tail_sensitivity(&f, Side::Right).unwrap();
        let bl = tail_sensitivity(&f, Side::Left).unwrap();
        let h = 1e-4;
        let logs = |f: &NullFit| {
            let l = |v: Vec<Option<f64>>| v.into_iter().map(|x| x.map(f64::ln)).collect::<Vec<_>>();
            (l(local_fdr(f)), l(tail_fdr(f, Side::Right)), l(tail_fdr(f, Side::Left)))
        };
        for j in [2, 10, 12, 20] {
            let (mut up, mut dn) = (y.clone(), y.clone());
            up[j] += h;
            dn[j] -= h;
            let (fu, fd) = (fitted(&up), fitted(&dn));
            let (lu, ru, leu) = logs(&fu);
            let (ld, rd, led) = logs(&fd);
            for k in 0..y.len() {
                for (u, d, m) in [(&lu, &ld, &a), (&ru, &rd, &br), (&leu, &led, &bl)] {
                    if let (Some(u), Some(d)) = (u[k], d[k]) {
                        let num = (u - d) / (2.0 * h);
                        assert!((num - m[(k, j)]).abs() < 1e-4, "bin {k} wrt {j}: {num} vs {}", m[(k, j)]);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_covariance_gives_zero_bands() {
        let f = fitted(&normal_counts());
        let v = BinCovariance::new(DMatrix::zeros(24, 24), CovarianceSource::External).unwrap();
        let c = fdr_covariances(&f, &v).unwrap();
        assert!(c.local.amax() == 0.0 && c.right.amax() == 0.0 && c.left.amax() == 0.0);
        let r = analyze(&f, &multinomial_cov(&f)).unwrap();
        for (b, e) in r.local_band(1.96).iter().zip(&r.local_fdr) {
            if let (Some((lo, hi)), Some(e)) = (b, e) {
                assert!(lo <= e && e <= hi);
            }
        }
    }

    #[test]
    fn bias_factor_is_one_for_zero_shift() {
        let f = fitted(&normal_counts());
        let b = asymptotic_fdr_bias_factor(&f.design.x, &[0.0; 3]).unwrap();
        assert!(b.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn flags_need_upper_below_curve() {
        let flags = flag_below_null(&[Some((0.1, 0.5)), Some((0.1, 0.9)), None], &[Some(0.8), Some(0.8), Some(0.8)]);
        assert_eq!(flags, vec![true, false, false]);
    }

    proptest! {
        #[test]
        fn identity_gives_ones(y in prop::collection::vec(0.0f64..50.0, 3..30)) {
            for v in local_fdr_from_counts(&y, &y).into_iter()
                .chain(tail_fdr_from_counts(&y, &y, Side::Right))
                .chain(tail_fdr_from_counts(&y, &y, Side::Left))
                .flatten()
            {
                prop_assert!((v - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn scale_invariant(y in prop::collection::vec(0.0f64..50.0, 3..30), c in 0.01f64..100.0) {
            let yhat: Vec<f64> = y.iter().map(|v| 0.7 * v + 0.3).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
            let yhs: Vec<f64> = yhat.iter().map(|v| v * c).collect();
            for side in [Side::Right, Side::Left] {
                for (a, b) in tail_fdr_from_counts(&y, &yhat, side).iter().zip(tail_fdr_from_counts(&ys, &yhs, side)) {
                    prop_assert_eq!(a.is_some(), b.is_some());
                    if let (Some(a), Some(b)) = (a, b) { prop_assert!((a - b).abs() < 1e-12 * a.max(1.0)); }
                }
            }
            for (a, b) in local_fdr_from_counts(&y, &yhat).iter().zip(local_fdr_from_counts(&ys, &yhs)) {
                if let (Some(a), Some(b)) = (a, b) { prop_assert!((a - b).abs() < 1e-12 * a.max(1.0)); }
            }
        }

        #[test]
        fn tail_is_weighted_average_of_local(y in prop::collection::vec(1.0f64..50.0, 3..20), r in prop::collection::vec(0.1f64..2.0, 20)) {
            // Fdr_R = Σ_j S_kj y_j fdr_j / Σ_j S_kj y_j
            let yhat: Vec<f64> = y.iter().zip(&r).map(|(a, b)| a * b).collect();
            let s = CumulationMatrix::new(y.len(), Side::Right).matrix();
            let loc = local_fdr_from_counts(&y, &yhat);
            let tail = tail_fdr_from_counts(&y, &yhat, Side::Right);
            for k in 0..y.len() {
                let num: f64 = (0..y.len()).map(|j| s[(k, j)] * y[j] * loc[j].unwrap()).sum();
                let den: f64 = (0..y.len()).map(|j| s[(k, j)] * y[j]).sum();
                prop_assert!((num / den - tail[k].unwrap()).abs() < 1e-12);
            }
        }

        #[test]
        fn zeta_positive_and_bounded(l in 1e-6f64..1e4) {
            let z = zeta(l).unwrap();
            prop_assert!(z > 0.0 && z < 1.3203);
        }
    }
}
