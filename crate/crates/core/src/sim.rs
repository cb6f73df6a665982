//! Monte-Carlo engine: scenario draws, tuning sweeps over the bin width and
//! the fitting interval, and fdr bias experiments on Poisson bin counts.

use rand::Rng;
use rand_distr::{Distribution as _, Poisson, StandardNormal};

use crate::covariance::theta_cov_multinomial;
use crate::error::{Error, Result};
use crate::expfam::{FamilyKind, FamilySpec, ParametricDensity};
use crate::fdr::{zeta, CumulationMatrix, Side};
use crate::histogram::HistogramSpec;
use crate::nullfit::{fit_with, DesignMatrix, FitPipeline, IrlsOptions};
use crate::par::{map_indexed, stream_rng, Execution};
use crate::scenario::MixtureScenario;

/// N statistics from the scenario, reproducible from `seed`.
pub fn generate(scenario: &MixtureScenario, n: usize, seed: u64) -> Vec<f64> {
    generate_keyed(scenario, n, seed, &[])
}

/// Draws from the stream keyed by `(seed, keys…)`.
pub fn generate_keyed(scenario: &MixtureScenario, n: usize, seed: u64, keys: &[u64]) -> Vec<f64> {
    let mut rng = stream_rng(seed, keys);
    (0..n).map(|_| scenario.sample_labeled(&mut rng).0).collect()
}

/// Draws with their null/alternative labels.
pub fn generate_labeled(scenario: &MixtureScenario, n: usize, seed: u64) -> Vec<(f64, bool)> {
    let mut rng = stream_rng(seed, &[]);
    (0..n).map(|_| scenario.sample_labeled(&mut rng)).collect()
}

/// n statistics a·χ²(ν), integer ν, with common pairwise correlation ρ ≥ 0:
/// T_i = a Σ_m (√r W_m + √(1 − r) E_im)² with r = √ρ and shared W.
pub fn equicorrelated_chisq<R: Rng + ?Sized>(n: usize, df: usize, scale: f64, rho: f64, rng: &mut R) -> Vec<f64> {
    let r = rho.max(0.0).sqrt();
    let (a, b) = (r.sqrt(), (1.0 - r).sqrt());
    let shared: Vec<f64> = (0..df).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    (0..n)
        .map(|_| {
            scale
                * shared
                    .iter()
                    .map(|&w| {
                        let z = a * w + b * rng.sample::<f64, _>(StandardNormal);
                        z * z
                    })
                    .sum::<f64>()
        })
        .collect()
}

/// Where a normal fitting interval is centred. χ² intervals always start at 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntervalCentre {
    /// S₀ = [μ₀ − t₀, μ₀ + t₀] around the true null mean.
    #[default]
    NullMean,
    /// S₀ = [−t₀, t₀] around the theoretical null centre 0.
    Zero,
}

/// Histogram and fitting-interval layout used for a scenario. A normal null
/// gets S₀ = [c − t₀, c + t₀] with bin edges at c − t₀ + jΔ, so S₀ is exact
/// whenever Δ divides 2t₀; a χ² null gets edges at jΔ from 0 and S₀ = [0, t₀].
pub fn pipeline_for(scenario: &MixtureScenario, bin_width: f64, t0: f64, centre: IntervalCentre) -> Result<FitPipeline> {
    crate::error::check_positive("bin width", bin_width)?;
    crate::error::check_positive("fitting half-width", t0)?;
    let alt_mean = scenario.alternative.mean();
    match scenario.null {
        ParametricDensity::Normal { mean, var } => {
            let c = match centre {
                IntervalCentre::NullMean => mean,
                IntervalCentre::Zero => 0.0,
            };
            let sd = var.sqrt();
            let lo = mean.min(c) - 8.0 * sd;
            let hi = mean.max(alt_mean).max(c) + 8.0 * sd;
            let anchor = c - t0;
            let below = ((anchor - lo) / bin_width).ceil().max(0.0);
            let origin = anchor - below * bin_width;
            let spec = HistogramSpec::spanning(origin, bin_width, hi)?;
            Ok(FitPipeline::new(spec, FamilySpec::new(FamilyKind::NormalFull)?, (c - t0, c + t0)))
        }
        ParametricDensity::ScaledChiSq { scale, df } => {
            let sd = scale * (2.0 * df).sqrt();
            let hi = (scale * df + 12.0 * sd).max(alt_mean + 12.0 * (2.0 * alt_mean).sqrt());
            let spec = HistogramSpec::spanning(0.0, bin_width, hi)?;
            Ok(FitPipeline::new(spec, FamilySpec::new(FamilyKind::ChiSqFull)?, (0.0, t0)))
        }
    }
}

/// Which tuning parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    BinWidth,
    /// The half-width t₀ of the fitting interval.
    FitInterval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub scenario: MixtureScenario,
    pub n: usize,
    pub reps: usize,
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    /// t₀ for a bin-width sweep, Δ for an interval sweep.
    pub fixed_other: f64,
    pub centre: IntervalCentre,
    pub seed: u64,
    pub execution: Execution,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(Error::Invalid(format!("need at least 2 replicates, got {}", self.reps)));
        }
        if self.n < 100 {
            return Err(Error::Invalid(format!("need at least 100 statistics, got {}", self.n)));
        }
        if self.grid.is_empty() || self.grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid("sweep grid must be non-empty and strictly increasing".into()));
        }
        Ok(())
    }

    fn pipeline(&self, value: f64) -> Result<FitPipeline> {
        match self.axis {
            SweepAxis::BinWidth => pipeline_for(&self.scenario, value, self.fixed_other, self.centre),
            SweepAxis::FitInterval => pipeline_for(&self.scenario, self.fixed_other, value, self.centre),
        }
    }
}

/// Replicate summary for one parameter at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    /// Mean squared deviation from the replicate mean (divisor n).
    pub variance: f64,
    /// Sample standard deviation (divisor n − 1).
    pub sd: f64,
    pub bias: f64,
    /// bias² + variance, equal to the mean squared error about the truth.
    pub mse: f64,
    /// Average delta-method standard error.
    pub mean_se: f64,
    /// Share of replicates with |θ̂ − θ| ≤ 1.96 SE.
    pub coverage: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub value: f64,
    pub params: Vec<ParamSummary>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<GridPoint>,
}

impl SweepResult {
    /// Grid value minimising the MSE of parameter `param`.
    pub fn argmin_mse(&self, param: usize) -> Option<f64> {
        self.points
            .iter()
            .filter(|p| p.params.len() > param && p.params[param].count > 0)
            .min_by(|a, b| a.params[param].mse.total_cmp(&b.params[param].mse))
            .map(|p| p.value)
    }
}

/// One replicate's estimate and delta-method standard errors.
type Replicate = Option<(Vec<f64>, Vec<f64>)>;

fn summarize(names: &[&str], truth: &[f64], reps: &[Replicate]) -> Vec<ParamSummary> {
    let ok: Vec<&(Vec<f64>, Vec<f64>)> = reps.iter().flatten().collect();
    let n = ok.len() as f64;
    (0..truth.len())
        .map(|j| {
            let mean = ok.iter().map(|r| r.0[j]).sum::<f64>() / n;
            let variance = ok.iter().map(|r| (r.0[j] - mean).powi(2)).sum::<f64>() / n;
            let bias = mean - truth[j];
            let mean_se = ok.iter().map(|r| r.1[j]).sum::<f64>() / n;
            let covered = ok.iter().filter(|r| (r.0[j] - truth[j]).abs() <= 1.959_963_984_540_054 * r.1[j]).count();
            ParamSummary {
                name: names[j].to_string(),
                truth: truth[j],
                mean,
                variance,
                sd: if n > 1.0 { (variance * n / (n - 1.0)).sqrt() } else { f64::NAN },
                bias,
                mse: bias * bias + variance,
                mean_se,
                coverage: covered as f64 / n,
                count: ok.len(),
            }
        })
        .collect()
}

/// Runs `reps` full pipelines (draw → histogram → fit → delta SE) per grid value.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let pipes: Vec<FitPipeline> = cfg.grid.iter().map(|&v| cfg.pipeline(v)).collect::<Result<_>>()?;
    let family = pipes[0].family;
    let names = family.param_names();
    let theta = family.theta_of(&cfg.scenario.null)?;
    let mut truth = vec![cfg.scenario.p0.ln()];
    truth.extend(theta);
    let reps = cfg.reps;
    let runs: Vec<Replicate> = map_indexed(cfg.execution, cfg.grid.len() * reps, |i| {
        let (g, r) = (i / reps, i % reps);
        let stats = generate_keyed(&cfg.scenario, cfg.n, cfg.seed, &[g as u64, r as u64]);
        let fit = pipes[g].run(&stats).ok()?;
        let cov = theta_cov_multinomial(&fit).ok()?;
        let se = cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
        Some((fit.usual.to_vec(), se))
    });
    let points = cfg
        .grid
        .iter()
        .enumerate()
        .map(|(g, &value)| {
            let block = &runs[g * reps..(g + 1) * reps];
            GridPoint {
                value,
                params: summarize(&names, &truth, block),
                failures: block.iter().filter(|r| r.is_none()).count(),
            }
        })
        .collect();
    Ok(SweepResult { axis: cfg.axis, points })
}

/// Settings for the Poisson-bin fdr experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct FdrExperimentConfig {
    pub scenario: MixtureScenario,
    pub n: usize,
    pub reps: usize,
    pub bin_width: f64,
    pub t0: f64,
    pub centre: IntervalCentre,
    /// Fit the null on each replicate instead of using the true p₀f₀.
    pub empirical_null: bool,
    pub seed: u64,
    pub execution: Execution,
}

/// Per-bin replicate summary of a curve estimate over the replicates where
/// it was defined.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSummary {
    pub mean: Vec<f64>,
    /// Monte-Carlo standard error of `mean`.
    pub mean_se: Vec<f64>,
    pub sd: Vec<f64>,
    pub p05: Vec<f64>,
    pub p95: Vec<f64>,
    pub defined: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdrBiasCurves {
    pub centers: Vec<f64>,
    /// Expected bin counts NΔf(t_k).
    pub lambda: Vec<f64>,
    pub true_local: Vec<f64>,
    pub true_right: Vec<f64>,
    /// fdr_k ζ(λ_k).
    pub zeta_local: Vec<f64>,
    /// Fdr_k ζ((Sλ)_k).
    pub zeta_right: Vec<f64>,
    pub local: CurveSummary,
    pub right: CurveSummary,
    /// Replicates whose null fit failed (empirical null only).
    pub failures: usize,
    /// Bins inside the fitting interval.
    pub in_fit_interval: Vec<bool>,
}

/// Replicates retained for percentiles.
pub const PERCENTILE_REPS: usize = 10_000;
const CHUNK: usize = 500;

#[derive(Clone)]
struct Acc {
    sum: Vec<f64>,
    sum2: Vec<f64>,
    count: Vec<usize>,
    kept: Vec<Vec<f64>>,
}

impl Acc {
    fn new(k: usize) -> Self {
        Self { sum: vec![0.0; k], sum2: vec![0.0; k], count: vec![0; k], kept: vec![Vec::new(); k] }
    }

    fn push(&mut self, v: &[Option<f64>], keep: bool) {
        for (k, x) in v.iter().enumerate() {
            if let Some(x) = *x {
                self.sum[k] += x;
                self.sum2[k] += x * x;
                self.count[k] += 1;
                if keep {
                    self.kept[k].push(x);
                }
            }
        }
    }

    fn merge(&mut self, o: Acc) {
        for k in 0..self.sum.len() {
            self.sum[k] += o.sum[k];
            self.sum2[k] += o.sum2[k];
            self.count[k] += o.count[k];
        }
        for (a, b) in self.kept.iter_mut().zip(o.kept) {
            a.extend(b);
        }
    }

    fn finish(mut self) -> CurveSummary {
        let k = self.sum.len();
        let mut s = CurveSummary {
            mean: vec![f64::NAN; k],
            mean_se: vec![f64::NAN; k],
            sd: vec![f64::NAN; k],
            p05: vec![f64::NAN; k],
            p95: vec![f64::NAN; k],
            defined: self.count.clone(),
        };
        for j in 0..k {
            let n = self.count[j] as f64;
            if n == 0.0 {
                continue;
            }
            let m = self.sum[j] / n;
            s.mean[j] = m;
            if n > 1.0 {
                let var = ((self.sum2[j] - n * m * m) / (n - 1.0)).max(0.0);
                s.sd[j] = var.sqrt();
                s.mean_se[j] = (var / n).sqrt();
            }
            let kept = &mut self.kept[j];
            if !kept.is_empty() {
                kept.sort_by(f64::total_cmp);
                s.p05[j] = percentile(kept, 0.05);
                s.p95[j] = percentile(kept, 0.95);
            }
        }
        s
    }
}

/// Linear-interpolation percentile of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Poisson bin counts y_k ~ Po(NΔ f(t_k)); fdr̂ = ŷ/y and Fdr̂_R with ŷ either
/// the true null counts or a per-replicate fit.
pub fn fdr_bias_experiment(cfg: &FdrExperimentConfig) -> Result<FdrBiasCurves> {
    if cfg.reps < 2 {
        return Err(Error::Invalid(format!("need at least 2 replicates, got {}", cfg.reps)));
    }
    let pipe = pipeline_for(&cfg.scenario, cfg.bin_width, cfg.t0, cfg.centre)?;
    let centers = pipe.spec.centers();
    let k = centers.len();
    let scale = cfg.n as f64 * cfg.bin_width;
    let lambda: Vec<f64> = centers.iter().map(|&t| scale * cfg.scenario.pdf(t)).collect();
    let lambda0: Vec<f64> = centers.iter().map(|&t| scale * cfg.scenario.p0 * cfg.scenario.null_pdf(t)).collect();
    let s = CumulationMatrix::new(k, Side::Right);
    let (sl, sl0) = (s.apply(&lambda), s.apply(&lambda0));
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::NAN };
    let true_local: Vec<f64> = lambda0.iter().zip(&lambda).map(|(&a, &b)| ratio(a, b)).collect();
    let true_right: Vec<f64> = sl0.iter().zip(&sl).map(|(&a, &b)| ratio(a, b)).collect();
    let z = |l: f64| zeta(l).unwrap_or(f64::NAN);
    let zeta_local = true_local.iter().zip(&lambda).map(|(&f, &l)| f * z(l)).collect();
    let zeta_right = true_right.iter().zip(&sl).map(|(&f, &l)| f * z(l)).collect();
    let mask = pipe.mask()?;
    let design = if cfg.empirical_null {
        Some(DesignMatrix::new(&centers, cfg.bin_width, cfg.n as f64, pipe.family, mask.clone())?)
    } else {
        None
    };
    let opts = IrlsOptions::default();
    let chunks = cfg.reps.div_ceil(CHUNK);
    let parts = map_indexed(cfg.execution, chunks, |c| {
        let (mut loc, mut right) = (Acc::new(k), Acc::new(k));
        let mut failures = 0usize;
        for r in c * CHUNK..((c + 1) * CHUNK).min(cfg.reps) {
            let mut rng = stream_rng(cfg.seed, &[r as u64]);
            let y: Vec<f64> = lambda
                .iter()
                .map(|&l| if l > 0.0 { Poisson::new(l).map(|p| p.sample(&mut rng)).unwrap_or(0.0) } else { 0.0 })
                .collect();
            let yhat = match &design {
                None => lambda0.clone(),
                Some(dm) => match fit_with(dm.clone(), &y, &opts) {
                    Ok(f) => f.fitted_counts,
                    Err(_) => {
                        failures += 1;
                        continue;
                    }
                },
            };
            let keep = r < PERCENTILE_REPS;
            loc.push(&crate::fdr::local_fdr_from_counts(&y, &yhat), keep);
            right.push(&crate::fdr::tail_fdr_from_counts(&y, &yhat, Side::Right), keep);
        }
        (loc, right, failures)
    });
    let (mut loc, mut right, mut failures) = (Acc::new(k), Acc::new(k), 0);
    for (l, r, f) in parts {
        loc.merge(l);
        right.merge(r);
        failures += f;
    }
    Ok(FdrBiasCurves {
        in_fit_interval: (0..k).map(|j| mask.is_selected(j)).collect(),
        centers,
        lambda,
        true_local,
        true_right,
        zeta_local,
        zeta_right,
        local: loc.finish(),
        right: right.finish(),
        failures,
    })
}
