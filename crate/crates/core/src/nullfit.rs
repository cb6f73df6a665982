//! Mode matching: the weighted log-linear Poisson regression of histogram
//! counts on the family's sufficient statistics.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expfam::{CanonicalParams, FamilySpec, ParametricDensity, UsualParams};
use crate::histogram::{build_histogram, FitMask, Histogram, HistogramSpec};

/// Regression inputs for one histogram geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    /// K × (dim + 1), rows `(1, x(t_k)')`; zero rows outside the support.
    pub x: DMatrix<f64>,
    /// `log(NΔ g₀(t_k))`; −∞ outside the support.
    pub offset: DVector<f64>,
    /// Fit weights w_k ∈ {0, 1}.
    pub weights: DVector<f64>,
    pub in_support: Vec<bool>,
    pub centers: Vec<f64>,
    pub bin_width: f64,
    /// N, including statistics that fell outside the histogram.
    pub total: f64,
    pub family: FamilySpec,
    pub mask: FitMask,
}

impl DesignMatrix {
    /// Design for bins at `centers` of width `bin_width` and total count `total`.
    pub fn new(centers: &[f64], bin_width: f64, total: f64, family: FamilySpec, mask: FitMask) -> Result<Self> {
        let k = centers.len();
        if mask.weights.len() != k {
            return Err(Error::Ragged { row: 0, expected: k, found: mask.weights.len() });
        }
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Domain { what: "total count", value: total });
        }
        let p = family.dim() + 1;
        let mut x = DMatrix::zeros(k, p);
        let mut offset = DVector::from_element(k, f64::NEG_INFINITY);
        let mut in_support = vec![false; k];
        let log_scale = (total * bin_width).ln();
        for (j, &t) in centers.iter().enumerate() {
            if !family.in_support(t) {
                if mask.is_selected(j) {
                    return Err(Error::OutsideSupport { bin: j, center: t });
                }
                continue;
            }
            in_support[j] = true;
            x[(j, 0)] = 1.0;
            for (c, v) in family.sufficient_vector(t)?.into_iter().enumerate() {
                x[(j, c + 1)] = v;
            }
            offset[j] = log_scale + family.log_carrier(t)?;
        }
        let weights = DVector::from_iterator(k, (0..k).map(|j| if in_support[j] { mask.weights[j] } else { 0.0 }));
        Ok(Self { x, offset, weights, in_support, centers: centers.to_vec(), bin_width, total, family, mask })
    }

    /// Number of regression coefficients, dim + 1.
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn num_bins(&self) -> usize {
        self.x.nrows()
    }

    pub fn selected(&self) -> Vec<usize> {
        (0..self.num_bins()).filter(|&j| self.weights[j] > 0.0).collect()
    }

    /// Same geometry with a different total count.
    pub fn with_total(&self, total: f64) -> Self {
        let shift = (total / self.total).ln();
        let mut out = self.clone();
        out.offset.iter_mut().for_each(|h| *h += shift);
        out.total = total;
        out
    }

    /// exp(Xβ + h) at every bin.
    pub fn predict(&self, beta: &DVector<f64>) -> DVector<f64> {
        let lin = &self.x * beta + &self.offset;
        lin.map(|v| if v == f64::NEG_INFINITY { 0.0 } else { v.exp() })
    }
}

/// Design for histogram `h`; the offset uses N = `h.total`.
pub fn build_design(h: &Histogram, family: &FamilySpec, mask: &FitMask) -> Result<DesignMatrix> {
    DesignMatrix::new(&h.centers, h.spec.bin_width, h.total as f64, *family, mask.clone())
}

/// IRLS stopping rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsOptions {
    pub max_iterations: usize,
    /// Relative change in deviance.
    pub tolerance: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self { max_iterations: 50, tolerance: 1e-10 }
    }
}

/// How the solver finished.
#[derive(Debug, Clone, PartialEq)]
pub struct Convergence {
    pub iterations: usize,
    /// ‖X'W(y − ŷ)‖∞ at the returned estimate.
    pub score_norm: f64,
    pub deviance: f64,
    /// Deviance after each iteration.
    pub trace: Vec<f64>,
}

fn poisson_deviance(y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    2.0 * y
        .iter()
        .zip(mu.iter())
        .map(|(&yi, &mi)| if yi > 0.0 { yi * (yi / mi).ln() - (yi - mi) } else { mi })
        .sum::<f64>()
}

fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.cholesky().map(|c| c.solve(b))
}

/// Poisson regression with log link restricted to the selected bins.
/// `y` may be real-valued (pseudo-counts).
pub fn solve_poisson(dm: &DesignMatrix, y: &[f64], opts: &IrlsOptions) -> Result<(DVector<f64>, Convergence)> {
    let sel = dm.selected();
    let p = dm.p();
    let mut distinct: Vec<f64> = sel.iter().map(|&j| dm.centers[j]).collect();
    distinct.dedup();
    if distinct.len() < p {
        return Err(Error::RankDeficient(format!("{} fitted bins for {} coefficients", distinct.len(), p)));
    }
    let xs = DMatrix::from_fn(sel.len(), p, |i, c| dm.x[(sel[i], c)]);
    let hs = DVector::from_iterator(sel.len(), sel.iter().map(|&j| dm.offset[j]));
    let ys = DVector::from_iterator(sel.len(), sel.iter().map(|&j| y[j]));
    if ys.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Invalid("counts must be finite and nonnegative".into()));
    }
    if ys.iter().all(|&v| v == 0.0) {
        return Err(Error::Invalid("every bin in the fitting interval is empty".into()));
    }
    // With fewer occupied bins than coefficients the likelihood has no maximum.
    let occupied = ys.iter().filter(|&&v| v > 0.0).count();
    if occupied < p {
        return Err(Error::RankDeficient(format!("{occupied} occupied bins for {p} coefficients")));
    }
    let score_scale = (xs.transpose() * &ys).amax().max(1.0);

    let z = DVector::from_iterator(sel.len(), ys.iter().zip(hs.iter()).map(|(&v, &h)| v.max(0.5).ln() - h));
    let xtx = xs.transpose() * &xs;
    let mut beta = solve_spd(xtx, &(xs.transpose() * z))
        .ok_or_else(|| Error::RankDeficient("X'WX is not positive definite".into()))?;

    let mean = |b: &DVector<f64>| (&xs * b + &hs).map(f64::exp);
    let mut mu = mean(&beta);
    let mut dev = poisson_deviance(&ys, &mu);
    let mut trace = Vec::new();
    let newton = |mu: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>)> {
        let score = xs.transpose() * (&ys - mu);
        let info = xs.transpose() * DMatrix::from_diagonal(mu) * &xs;
        let step = solve_spd(info, &score).ok_or(Error::Singular("Fisher information"))?;
        Ok((step, score))
    };

    for it in 1..=opts.max_iterations {
        let (step, _) = newton(&mu)?;
        let mut accepted = None;
        let mut frac = 1.0;
        for _ in 0..40 {
            let cand = &beta + &step * frac;
            let mu_c = mean(&cand);
            let dev_c = poisson_deviance(&ys, &mu_c);
            if dev_c.is_finite() && dev_c <= dev + 1e-12 * dev.abs().max(1.0) {
                accepted = Some((cand, mu_c, dev_c));
                break;
            }
            frac *= 0.5;
        }
        let Some((b_new, mu_new, dev_new)) = accepted else {
            let score_norm = (xs.transpose() * (&ys - &mu)).amax();
            return Err(Error::NonConvergence { iterations: it, score_norm, trace });
        };
        let rel = (dev - dev_new).abs() / (dev_new.abs() + 0.1);
        beta = b_new;
        mu = mu_new;
        dev = dev_new;
        trace.push(dev);
        let score_norm = (xs.transpose() * (&ys - &mu)).amax();
        if rel < opts.tolerance && score_norm <= 1e-8 * score_scale {
            // One polishing step brings the score to rounding level.
            let (step, _) = newton(&mu)?;
            let cand = &beta + step;
            let mu_c = mean(&cand);
            let sc = (xs.transpose() * (&ys - &mu_c)).amax();
            if sc.is_finite() && sc <= score_norm {
                beta = cand;
                mu = mu_c;
                dev = poisson_deviance(&ys, &mu);
            }
            let score_norm = (xs.transpose() * (&ys - &mu)).amax();
            return Ok((beta, Convergence { iterations: it, score_norm, deviance: dev, trace }));
        }
    }
    let score_norm = (xs.transpose() * (&ys - &mu)).amax();
    Err(Error::NonConvergence { iterations: opts.max_iterations, score_norm, trace })
}

/// A fitted empirical null.
#[derive(Debug, Clone, PartialEq)]
pub struct NullFit {
    pub design: DesignMatrix,
    /// Observed counts y over all K bins.
    pub counts: Vec<f64>,
    /// (Ĉ, η̂).
    pub canonical: CanonicalParams,
    /// (log p̂₀, θ̂).
    pub usual: UsualParams,
    /// ŷ over all K bins, including those outside the fitting interval.
    pub fitted_counts: Vec<f64>,
    pub convergence: Convergence,
}

/// Null and alternative density estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPrediction {
    /// p̂₀ f̂₀(t).
    pub null: Vec<f64>,
    /// (y − ŷ)/(NΔ) of the bin holding t; zero outside the histogram.
    pub alternative: Vec<f64>,
}

/// Fits with default options.
pub fn fit(dm: DesignMatrix, y: &[f64]) -> Result<NullFit> {
    fit_with(dm, y, &IrlsOptions::default())
}

pub fn fit_with(dm: DesignMatrix, y: &[f64], opts: &IrlsOptions) -> Result<NullFit> {
    if y.len() != dm.num_bins() {
        return Err(Error::Ragged { row: 0, expected: dm.num_bins(), found: y.len() });
    }
    dm.mask.check_counts(y)?;
    let (beta, convergence) = solve_poisson(&dm, y, opts)?;
    NullFit::from_estimate(dm, y.to_vec(), CanonicalParams::from_slice(beta.as_slice()), convergence)
}

/// Histogram → design → fit.
pub fn fit_histogram(h: &Histogram, family: &FamilySpec, mask: &FitMask) -> Result<NullFit> {
    fit(build_design(h, family, mask)?, &h.counts_f64())
}

impl NullFit {
    /// Rebuilds a fit from stored coefficients (no solving).
    pub fn from_estimate(
        design: DesignMatrix,
        counts: Vec<f64>,
        canonical: CanonicalParams,
        convergence: Convergence,
    ) -> Result<Self> {
        if canonical.eta.len() + 1 != design.p() {
            return Err(Error::Invalid("coefficient count does not match the design".into()));
        }
        let usual = design.family.theta_from_eta(&canonical)?;
        let beta = DVector::from_vec(canonical.to_vec());
        let fitted_counts = design.predict(&beta).as_slice().to_vec();
        Ok(Self { design, counts, canonical, usual, fitted_counts, convergence })
    }

    pub fn family(&self) -> &FamilySpec {
        &self.design.family
    }

    pub fn p0(&self) -> f64 {
        self.usual.log_p0.exp()
    }

    pub fn beta(&self) -> DVector<f64> {
        DVector::from_vec(self.canonical.to_vec())
    }

    /// The fitted null density f̂₀.
    pub fn null_shape(&self) -> Result<ParametricDensity> {
        self.design.family.shape(&self.usual.theta)
    }

    /// y − ŷ, the alternative component's counts.
    pub fn alternative_counts(&self) -> Vec<f64> {
        self.counts.iter().zip(&self.fitted_counts).map(|(y, f)| y - f).collect()
    }

    /// ‖X'W(y − ŷ)‖∞.
    pub fn score_residual(&self) -> f64 {
        let r = DVector::from_iterator(
            self.counts.len(),
            (0..self.counts.len()).map(|j| self.design.weights[j] * (self.counts[j] - self.fitted_counts[j])),
        );
        (self.design.x.transpose() * r).amax()
    }

    /// Pearson quasi-likelihood dispersion over the fitted bins,
    /// (1/K₀) Σ (y_k − ŷ_k)²/ŷ_k; about 1 for independent statistics.
    pub fn overdispersion(&self) -> Result<f64> {
        let sel = self.design.selected();
        let mut sum = 0.0;
        for &k in &sel {
            let lam = self.fitted_counts[k];
            if lam <= 0.0 {
                return Err(Error::ZeroFitted { bin: k });
            }
            let r = self.counts[k] - lam;
            sum += r * r / lam;
        }
        Ok(sum / sel.len() as f64)
    }

    /// p̂₀ f̂₀ at arbitrary points and the bin-wise alternative estimate.
    pub fn predict_density(&self, t: &[f64]) -> Result<DensityPrediction> {
        let fam = &self.design.family;
        let n_delta = self.design.total * self.design.bin_width;
        let mut null = Vec::with_capacity(t.len());
        for &v in t {
            if !fam.in_support(v) {
                null.push(0.0);
                continue;
            }
            let x = fam.sufficient_vector(v)?;
            let lin: f64 = x.iter().zip(&self.canonical.eta).map(|(a, b)| a * b).sum();
            null.push((self.canonical.intercept + lin + fam.log_carrier(v)?).exp());
        }
        let spec = self.histogram_spec()?;
        let alt = self.alternative_counts();
        let alternative = t
            .iter()
            .map(|&v| spec.bin_index(v).map(|k| alt[k] / n_delta).unwrap_or(0.0))
            .collect();
        Ok(DensityPrediction { null, alternative })
    }

    fn histogram_spec(&self) -> Result<HistogramSpec> {
        let c = &self.design.centers;
        HistogramSpec::new(c[0] - 0.5 * self.design.bin_width, self.design.bin_width, c.len())
    }
}

/// Everything needed to go from raw statistics to a fit; used by resampling
/// and simulation loops.
#[derive(Debug, Clone, PartialEq)]
pub struct FitPipeline {
    pub spec: HistogramSpec,
    pub family: FamilySpec,
    /// Requested fitting interval, snapped outward to bins.
    pub interval: (f64, f64),
    pub options: IrlsOptions,
}

impl FitPipeline {
    pub fn new(spec: HistogramSpec, family: FamilySpec, interval: (f64, f64)) -> Self {
        Self { spec, family, interval, options: IrlsOptions::default() }
    }

    pub fn mask(&self) -> Result<FitMask> {
        FitMask::from_interval(&self.spec, self.interval.0, self.interval.1)
    }

    pub fn run(&self, statistics: &[f64]) -> Result<NullFit> {
        self.run_histogram(&build_histogram(statistics, self.spec)?)
    }

    pub fn run_histogram(&self, h: &Histogram) -> Result<NullFit> {
        let dm = build_design(h, &self.family, &self.mask()?)?;
        fit_with(dm, &h.counts_f64(), &self.options)
    }
}
