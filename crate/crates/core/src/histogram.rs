//! Equal-width binning of test statistics and the fitting-interval mask.

use crate::error::{check_finite, check_positive, Error, Result};
use crate::expfam::ParametricDensity;

/// Geometry of an equal-width histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramSpec {
    /// Left edge of the first bin.
    pub origin: f64,
    /// Bin width Δ.
    pub bin_width: f64,
    /// Number of bins K.
    pub num_bins: usize,
}

impl HistogramSpec {
    pub fn new(origin: f64, bin_width: f64, num_bins: usize) -> Result<Self> {
        check_finite("histogram origin", origin)?;
        check_positive("bin width", bin_width)?;
        if num_bins < 3 {
            return Err(Error::Invalid(format!("need at least 3 bins, got {num_bins}")));
        }
        Ok(Self { origin, bin_width, num_bins })
    }

    /// Bins starting at `origin` and reaching past `upper`.
    pub fn spanning(origin: f64, bin_width: f64, upper: f64) -> Result<Self> {
        check_positive("bin width", bin_width)?;
        check_finite("histogram upper end", upper)?;
        if upper <= origin {
            return Err(Error::Invalid(format!("upper end {upper} not above origin {origin}")));
        }
        let mut k = ((upper - origin) / bin_width).ceil() as usize;
        while origin + k as f64 * bin_width <= upper {
            k += 1;
        }
        Self::new(origin, bin_width, k.max(3))
    }

    /// Bins covering `[lo, hi]` with one bin centred exactly at `center`.
    pub fn centered_on(center: f64, bin_width: f64, lo: f64, hi: f64) -> Result<Self> {
        check_finite("bin centre", center)?;
        check_positive("bin width", bin_width)?;
        let below = ((center - 0.5 * bin_width - lo) / bin_width).ceil().max(0.0);
        let origin = center - 0.5 * bin_width - below * bin_width;
        Self::spanning(origin, bin_width, hi.max(center + bin_width))
    }

    pub fn left_edge(&self, k: usize) -> f64 {
        self.origin + k as f64 * self.bin_width
    }

    pub fn right_edge(&self, k: usize) -> f64 {
        self.left_edge(k + 1)
    }

    pub fn upper(&self) -> f64 {
        self.left_edge(self.num_bins)
    }

    pub fn center(&self, k: usize) -> f64 {
        self.origin + (k as f64 + 0.5) * self.bin_width
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.num_bins).map(|k| self.center(k)).collect()
    }

    /// Bin holding `x` under the half-open `[left, right)` rule.
    pub fn bin_index(&self, x: f64) -> Option<usize> {
        if !(x >= self.origin) || x >= self.upper() {
            return None;
        }
        let mut k = ((x - self.origin) / self.bin_width).floor() as usize;
        k = k.min(self.num_bins - 1);
        // Agree exactly with the edges as computed by `left_edge`.
        if k > 0 && x < self.left_edge(k) {
            k -= 1;
        } else if k + 1 < self.num_bins && x >= self.left_edge(k + 1) {
            k += 1;
        }
        Some(k)
    }

    /// Fractional bin coordinate, snapped to an integer when within rounding of one.
    fn edge_coordinate(&self, x: f64) -> f64 {
        let r = (x - self.origin) / self.bin_width;
        if (r - r.round()).abs() < 1e-9 {
            r.round()
        } else {
            r
        }
    }
}

/// Binned counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub spec: HistogramSpec,
    pub centers: Vec<f64>,
    pub counts: Vec<u64>,
    /// N: in-range counts plus `out_of_range`.
    pub total: u64,
    pub out_of_range: u64,
}

/// Bins `statistics`; values outside `[origin, origin + KΔ)` are only tallied.
pub fn build_histogram(statistics: &[f64], spec: HistogramSpec) -> Result<Histogram> {
    if statistics.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut counts = vec![0u64; spec.num_bins];
    let mut out_of_range = 0u64;
    for (index, &x) in statistics.iter().enumerate() {
        if x.is_nan() {
            return Err(Error::NonFinite { index });
        }
        match spec.bin_index(x) {
            Some(k) => counts[k] += 1,
            None => out_of_range += 1,
        }
    }
    Ok(Histogram {
        spec,
        centers: spec.centers(),
        counts,
        total: statistics.len() as u64,
        out_of_range,
    })
}

impl Histogram {
    /// Histogram from precomputed counts (replicate rows, simulated Poisson bins).
    pub fn from_counts(spec: HistogramSpec, counts: Vec<u64>, out_of_range: u64) -> Result<Self> {
        if counts.len() != spec.num_bins {
            return Err(Error::Ragged { row: 0, expected: spec.num_bins, found: counts.len() });
        }
        let total = counts.iter().sum::<u64>() + out_of_range;
        if total == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(Self { spec, centers: spec.centers(), counts, total, out_of_range })
    }

    pub fn counts_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// y / (NΔ), the histogram density estimate at the bin centres.
    pub fn density_estimate(&self) -> Vec<f64> {
        let scale = self.total as f64 * self.spec.bin_width;
        self.counts.iter().map(|&c| c as f64 / scale).collect()
    }
}

/// Bins selected for the fit: those whose centres lie in the snapped interval.
#[derive(Debug, Clone, PartialEq)]
pub struct FitMask {
    pub weights: Vec<f64>,
    /// Interval after snapping outward to bin edges.
    pub interval: (f64, f64),
    /// Interval as requested.
    pub requested: (f64, f64),
}

impl FitMask {
    /// Selects every bin touched by `[lo, hi]`, widening the interval to whole bins.
    pub fn from_interval(spec: &HistogramSpec, lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::Invalid(format!("bad fitting interval [{lo}, {hi}]")));
        }
        let k = spec.num_bins as f64;
        let first = spec.edge_coordinate(lo).floor().max(0.0);
        let last = (spec.edge_coordinate(hi).ceil() - 1.0).min(k - 1.0);
        let last = if spec.edge_coordinate(hi) == spec.edge_coordinate(lo) { first } else { last };
        if last < first || first > k - 1.0 || last < 0.0 {
            return Err(Error::Invalid(format!(
                "fitting interval [{lo}, {hi}] selects no bins of [{}, {})",
                spec.origin,
                spec.upper()
            )));
        }
        let (first, last) = (first as usize, last as usize);
        let weights = (0..spec.num_bins)
            .map(|j| if j >= first && j <= last { 1.0 } else { 0.0 })
            .collect();
        Ok(Self {
            weights,
            interval: (spec.left_edge(first), spec.right_edge(last)),
            requested: (lo, hi),
        })
    }

    /// Every bin selected.
    pub fn all(spec: &HistogramSpec) -> Self {
        Self {
            weights: vec![1.0; spec.num_bins],
            interval: (spec.origin, spec.upper()),
            requested: (spec.origin, spec.upper()),
        }
    }

    pub fn is_selected(&self, k: usize) -> bool {
        self.weights[k] > 0.0
    }

    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights.iter().enumerate().filter(|(_, &w)| w > 0.0).map(|(k, _)| k)
    }

    pub fn count(&self) -> usize {
        self.selected().count()
    }

    /// At least one selected bin must hold a positive count.
    pub fn check_counts(&self, counts: &[f64]) -> Result<()> {
        if counts.len() != self.weights.len() {
            return Err(Error::Ragged { row: 0, expected: self.weights.len(), found: counts.len() });
        }
        if self.selected().any(|k| counts[k] > 0.0) {
            Ok(())
        } else {
            Err(Error::Invalid("every bin in the fitting interval is empty".into()))
        }
    }
}

/// Expansion order for [`bin_probability`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    First,
    Third,
}

/// Probability of bin k: Δ f₀(t_k), optionally plus (Δ³/24) f₀''(t_k).
/// The second derivative is taken by central differences.
pub fn bin_probability<F: Fn(f64) -> f64>(f0: F, k: usize, spec: &HistogramSpec, order: Order) -> f64 {
    let t = spec.center(k);
    let d = spec.bin_width;
    let first = d * f0(t);
    match order {
        Order::First => first,
        Order::Third => {
            let h = 1e-4 * t.abs().max(1.0);
            let curvature = (f0(t + h) - 2.0 * f0(t) + f0(t - h)) / (h * h);
            first + d * d * d / 24.0 * curvature
        }
    }
}

/// Size of the next Taylor term of the bin probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureBound {
    /// |f₀''| Δ³/24 at the null mode, where the fit's counts concentrate.
    pub at_mode: f64,
    /// max over the considered bins of |f₀''(t_k)| Δ³/24.
    pub max_over_bins: f64,
    /// χ² null with ν < 2 and an interval reaching 0: curvature has no bound.
    pub unbounded: bool,
}

/// Bin-width bias diagnostic over the masked bins (all bins when `mask` is `None`).
pub fn curvature_bias_bound(
    null: &ParametricDensity,
    spec: &HistogramSpec,
    mask: Option<&FitMask>,
) -> CurvatureBound {
    let cube = spec.bin_width.powi(3) / 24.0;
    let bins: Vec<usize> = match mask {
        Some(m) => m.selected().collect(),
        None => (0..spec.num_bins).collect(),
    };
    let max_over_bins = bins
        .iter()
        .map(|&k| spec.center(k))
        .filter(|&t| null.in_support(t))
        .map(|t| null.second_derivative(t).abs() * cube)
        .fold(0.0, f64::max);
    let touches_zero = bins.first().map(|&k| spec.left_edge(k) <= 0.0).unwrap_or(false);
    let unbounded = matches!(null, ParametricDensity::ScaledChiSq { df, .. } if *df < 2.0) && touches_zero;
    let at_mode = match null.mode() {
        Some(m) => null.second_derivative(m).abs() * cube,
        None => f64::INFINITY,
    };
    CurvatureBound { at_mode, max_over_bins, unbounded }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binning_examples() {
        let spec = HistogramSpec::new(0.0, 0.1, 4).unwrap();
        let h = build_histogram(&[0.05, 0.12, 0.31], spec).unwrap();
        assert_eq!(h.counts, vec![1, 1, 0, 1]);
        assert_eq!(h.out_of_range, 0);
        let h = build_histogram(&[0.10], spec).unwrap();
        assert_eq!(h.counts, vec![0, 1, 0, 0]);
        assert!(matches!(build_histogram(&[], spec), Err(Error::EmptyInput)));
        assert!(matches!(
            build_histogram(&[0.1, f64::NAN], spec),
            Err(Error::NonFinite { index: 1 })
        ));
        let h = build_histogram(&[-1.0, 0.4, 0.39999], spec).unwrap();
        assert_eq!(h.out_of_range, 2);
        assert_eq!(h.total, 3);
    }

    #[test]
    fn density_examples() {
        let spec = HistogramSpec::new(0.0, 0.5, 3).unwrap();
        let h = Histogram::from_counts(spec, vec![2, 0, 0], 0).unwrap();
        assert_eq!(h.density_estimate(), vec![2.0, 0.0, 0.0]);
    }

    #[test]
    fn mask_snaps_outward() {
        let spec = HistogramSpec::new(-6.0, 0.1, 120).unwrap();
        let m = FitMask::from_interval(&spec, -1.0, 1.0).unwrap();
        assert_eq!(m.count(), 20);
        assert!((m.interval.0 + 1.0).abs() < 1e-12 && (m.interval.1 - 1.0).abs() < 1e-12);
        let m = FitMask::from_interval(&spec, -0.95, 1.03).unwrap();
        assert_eq!(m.count(), 21);
        assert!((m.interval.1 - 1.1).abs() < 1e-12);
        for k in 0..spec.num_bins {
            let c = spec.center(k);
            assert_eq!(m.is_selected(k), c >= m.interval.0 && c <= m.interval.1);
        }
        assert!(FitMask::from_interval(&spec, 20.0, 30.0).is_err());
    }

    #[test]
    fn uniform_has_no_correction() {
        let spec = HistogramSpec::new(0.0, 0.1, 10).unwrap();
        let u = |t: f64| if (0.0..=1.0).contains(&t) { 1.0 } else { 0.0 };
        for k in 1..9 {
            assert_eq!(bin_probability(u, k, &spec, Order::Third), bin_probability(u, k, &spec, Order::First));
        }
    }

    #[test]
    fn third_order_corrections_at_mode() {
        let sigma: f64 = 1.2;
        let null = ParametricDensity::Normal { mean: 0.2, var: sigma * sigma };
        let d = 0.2 * sigma;
        let spec = HistogramSpec::new(0.2 - 0.5 * d, d, 3).unwrap();
        let f = |t: f64| null.pdf(t);
        let corr = bin_probability(f, 0, &spec, Order::Third) - bin_probability(f, 0, &spec, Order::First);
        // With Δ = 0.2σ the σ's cancel: 0.2³/24 · 0.3989 ≈ 1.33e-4.
        assert!(corr.abs() <= 1.36e-4 && corr.abs() > 1.2e-4, "{corr}");

        let chi = ParametricDensity::ScaledChiSq { scale: 1.0, df: 3.0 };
        let spec = HistogramSpec::new(1.0 - 0.1, 0.2, 3).unwrap();
        let f = |t: f64| chi.pdf(t);
        let corr = bin_probability(f, 0, &spec, Order::Third) - bin_probability(f, 0, &spec, Order::First);
        assert!((corr.abs() - 4e-5).abs() < 0.3e-5, "{corr}");
    }

    #[test]
    fn curvature_bounds() {
        let n = ParametricDensity::Normal { mean: 0.0, var: 1.0 };
        let spec = HistogramSpec::new(-4.1, 0.2, 41).unwrap();
        let b = curvature_bias_bound(&n, &spec, None);
        assert!(b.at_mode <= 0.017 * 0.008 && !b.unbounded);
        assert!((b.max_over_bins - b.at_mode).abs() < 1e-12);

        let c = ParametricDensity::ScaledChiSq { scale: 1.0, df: 3.0 };
        let spec = HistogramSpec::new(0.0, 0.2, 100).unwrap();
        let b = curvature_bias_bound(&c, &spec, None);
        assert!((b.at_mode / 0.008 - 0.005).abs() < 0.0005, "{}", b.at_mode / 0.008);
        assert!(!b.unbounded);

        let c = ParametricDensity::ScaledChiSq { scale: 1.0, df: 1.5 };
        assert!(curvature_bias_bound(&c, &spec, None).unbounded);
        let mask = FitMask::from_interval(&spec, 1.0, 4.0).unwrap();
        assert!(!curvature_bias_bound(&c, &spec, Some(&mask)).unbounded);
    }

    proptest! {
        #[test]
        fn conservation(xs in prop::collection::vec(-3.0f64..3.0, 1..400)) {
            let spec = HistogramSpec::new(-2.0, 0.1, 40).unwrap();
            let h = build_histogram(&xs, spec).unwrap();
            prop_assert_eq!(h.counts.iter().sum::<u64>() + h.out_of_range, xs.len() as u64);
            let mass: f64 = h.density_estimate().iter().sum::<f64>() * spec.bin_width;
            let want = (h.total - h.out_of_range) as f64 / h.total as f64;
            prop_assert!((mass - want).abs() < 1e-12);
        }

        #[test]
        fn translation_consistent(raw in prop::collection::vec(0u32..4096, 1..200), shift in -64i32..64) {
            // Dyadic values keep every subtraction exact.
            let xs: Vec<f64> = raw.iter().map(|&r| r as f64 / 1024.0 - 2.0).collect();
            let s = shift as f64 / 8.0;
            let a = build_histogram(&xs, HistogramSpec::new(-1.0, 0.125, 16).unwrap()).unwrap();
            let moved: Vec<f64> = xs.iter().map(|x| x + s).collect();
            let b = build_histogram(&moved, HistogramSpec::new(-1.0 + s, 0.125, 16).unwrap()).unwrap();
            prop_assert_eq!(a.counts, b.counts);
        }
    }
}
