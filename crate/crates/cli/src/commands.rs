use std::fs;

use serde::Serialize;

use empnull::bias::{asymptotic_bias, MixtureScenario};
use empnull::correlation::{estimate_correlation_moment, null_expected_counts, top_eigenpairs};
use empnull::covariance::{bootstrap_cov, multinomial_cov, param_cov, BinCovariance, BootstrapConfig};
use empnull::expfam::{quantile_transform, FamilyKind, FamilySpec, InputDistribution, ParametricDensity};
use empnull::fdr;
use empnull::histogram::HistogramSpec;
use empnull::nullfit::{FitPipeline, NullFit};
use empnull::par::Execution;
use empnull::sim::{fdr_bias_experiment, pipeline_for, run_sweep, FdrExperimentConfig, IntervalCentre, SweepAxis, SweepConfig};

use crate::args::*;
use crate::artifact::*;
use crate::error::{CliError, CliResult};
use crate::ingest::{read_perm_cov, read_statistics, Statistics};
use crate::output::{emit, num, opt, Csv};

fn chisq_based(family: &FamilySpec) -> bool {
    match family.kind() {
        FamilyKind::ChiSqFull | FamilyKind::ChiSqScaleOnly { .. } | FamilyKind::ChiSqDfOnly { .. } => true,
        FamilyKind::InterceptOnly { null } => matches!(null, ParametricDensity::ScaledChiSq { .. }),
        _ => false,
    }
}

/// Bins reaching from the origin past both the data and the interval. Without
/// an explicit origin, χ² nulls start at 0 and other nulls get edges aligned
/// with the interval's lower end.
fn histogram_layout(values: &[f64], family: &FamilySpec, bin_width: f64, (lo, hi): (f64, f64), origin: Option<f64>) -> CliResult<HistogramSpec> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let origin = match origin {
        Some(o) => o,
        None if chisq_based(family) => 0.0,
        None => lo - ((lo - min) / bin_width).ceil().max(0.0) * bin_width,
    };
    if origin > lo {
        return Err(CliError::Usage(format!("origin {origin} lies above the fitting interval's lower end {lo}")));
    }
    Ok(HistogramSpec::spanning(origin, bin_width, max.max(hi))?)
}

fn cov_record(fit: &NullFit, vn: &BinCovariance) -> CliResult<ParamCovRecord> {
    let c = param_cov(fit, vn)?;
    Ok(ParamCovRecord { eta_plus: matrix_rows(&c.cov_eta_plus), theta_plus: matrix_rows(&c.cov_theta_plus) })
}

pub fn fit(a: &FitArgs) -> CliResult<()> {
    let family = parse_family(&a.family, &parse_fixed(&a.fix_params)?)?;
    let interval = parse_pair(&a.fit_interval, "--fit-interval")?;
    let Statistics { values, bytes } = read_statistics(&a.input.input, &a.input.format()?)?;
    let spec = histogram_layout(&values, &family, a.bin_width, interval, a.origin)?;
    let pipeline = FitPipeline::new(spec, family, interval);
    let fit = pipeline.run(&values)?;
    let k = fit.design.num_bins();

    let multinomial = cov_record(&fit, &multinomial_cov(&fit))?;
    let permutation = match &a.perm_cov {
        Some(p) => Some(cov_record(&fit, &read_perm_cov(p, k)?)?),
        None => None,
    };
    let bootstrap = match a.bootstrap {
        Some(b) => {
            let cfg = BootstrapConfig { replicates: b, seed: a.seed, execution: Execution::default() };
            let r = bootstrap_cov(&values, &pipeline, &cfg)?;
            Some(BootstrapRecord {
                replicates: b,
                failures: r.failures,
                seed: a.seed,
                eta_plus: matrix_rows(&r.eta_cov),
                theta_plus: matrix_rows(&r.theta_cov),
            })
        }
        None => None,
    };
    let h = &fit.design;
    let mask = &h.mask;
    let c = &fit.convergence;
    let artifact = FitArtifact {
        schema_version: SCHEMA_VERSION,
        family: FamilyRecord { name: family.name().to_string(), fixed: parse_fixed(&a.fix_params)? },
        histogram: HistogramRecord {
            origin: spec.origin,
            bin_width: spec.bin_width,
            num_bins: spec.num_bins,
            total: h.total as u64,
            out_of_range: (values.len() as u64).saturating_sub(h.total as u64),
        },
        fit_interval: IntervalRecord {
            requested: [mask.requested.0, mask.requested.1],
            snapped: [mask.interval.0, mask.interval.1],
        },
        parameters: family.param_names().iter().map(|s| s.to_string()).collect(),
        eta_plus: fit.canonical.to_vec(),
        theta_plus: fit.usual.to_vec(),
        covariance: CovarianceRecord { multinomial, permutation, bootstrap },
        fitted_counts: fit.fitted_counts.clone(),
        overdispersion: fit.overdispersion().ok().filter(|v| v.is_finite()),
        convergence: ConvergenceRecord {
            iterations: c.iterations,
            score_norm: c.score_norm,
            deviance: c.deviance,
            trace: c.trace.clone(),
        },
        provenance: Provenance {
            input_sha256: sha256_hex(&bytes),
            n_statistics: values.len(),
            seed: a.bootstrap.map(|_| a.seed),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        },
    };
    emit(a.output.as_deref(), &artifact.render()?)
}

fn load_fit(path: &std::path::Path, input: &InputArgs) -> CliResult<NullFit> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let artifact = FitArtifact::parse(&text)?;
    let Statistics { values, bytes } = read_statistics(&input.input, &input.format()?)?;
    artifact.restore(&values, &bytes)
}

fn band_fields(est: &[Option<f64>], band: &[Option<(f64, f64)>], k: usize, cap: bool) -> [String; 3] {
    let c = |v: Option<f64>| if cap { v.map(|x| x.min(1.0)) } else { v };
    [opt(c(est[k])), opt(c(band[k].map(|b| b.0))), opt(c(band[k].map(|b| b.1)))]
}

pub fn fdr(a: &FdrArgs) -> CliResult<()> {
    if !(a.z > 0.0) {
        return Err(CliError::Usage("--z must be positive".into()));
    }
    let fit = load_fit(&a.fit, &a.input)?;
    let vn = match &a.perm_cov {
        Some(p) => read_perm_cov(p, fit.design.num_bins())?,
        None => multinomial_cov(&fit),
    };
    let r = fdr::analyze(&fit, &vn)?;
    let (local, right, left) = (r.local_band(a.z), r.right_band(a.z), r.left_band(a.z));
    let mut header = vec![
        "t", "y", "yhat", "fdr_local", "fdr_local_lo", "fdr_local_hi", "fdr_right", "fdr_right_lo", "fdr_right_hi",
        "fdr_left", "fdr_left_lo", "fdr_left_hi",
    ];
    if a.adjust_zeta {
        header.extend(["zeta_null", "fdr_adjusted"]);
    }
    let mut csv = Csv::new(&header);
    for k in 0..fit.design.num_bins() {
        let mut row = vec![num(fit.design.centers[k]), num(fit.counts[k]), num(fit.fitted_counts[k])];
        row.extend(band_fields(&r.local_fdr, &local, k, a.cap));
        row.extend(band_fields(&r.fdr_right, &right, k, a.cap));
        row.extend(band_fields(&r.fdr_left, &left, k, a.cap));
        if a.adjust_zeta {
            row.push(opt(r.zeta_expected_null[k]));
            row.push(opt(r.adjusted_local_fdr[k].map(|v| if a.cap { v.min(1.0) } else { v })));
        }
        csv.row(&row);
    }
    emit(a.output.as_deref(), &csv.into_string())
}

fn scenario(s: &ScenarioArgs) -> CliResult<(MixtureScenario, IntervalCentre)> {
    let sc = match s.scenario {
        ScenarioArg::Normal => MixtureScenario::normal_shift(s.p0),
        ScenarioArg::Chisq => MixtureScenario::chisq_noncentral(s.p0),
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let centre = match s.centre {
        CentreArg::NullMean => IntervalCentre::NullMean,
        CentreArg::Zero => IntervalCentre::Zero,
    };
    Ok((sc, centre))
}

fn usage_on_invalid(e: empnull::Error) -> CliError {
    if e.is_numerical() {
        CliError::from(e)
    } else {
        CliError::Usage(e.to_string())
    }
}

pub fn bias(a: &BiasArgs) -> CliResult<()> {
    let (sc, centre) = scenario(&a.scenario)?;
    let pipe = pipeline_for(&sc, a.bin_width, a.t0, centre).map_err(usage_on_invalid)?;
    let b = asymptotic_bias(&sc, &pipe)?;
    let mut csv = Csv::new(&["parameter", "theta_plus", "theta_limit", "bias_exact", "bias_approx"]);
    for (i, name) in pipe.family.param_names().iter().enumerate() {
        csv.row(&[name.to_string(), num(b.theta_true[i]), num(b.theta_limit[i]), num(b.bias_exact[i]), num(b.bias_approx[i])]);
    }
    emit(a.output.as_deref(), &csv.into_string())
}

fn default_t0(s: ScenarioArg) -> f64 {
    match s {
        ScenarioArg::Normal => 1.5,
        ScenarioArg::Chisq => 4.0,
    }
}

pub fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let (sc, centre) = scenario(&a.scenario)?;
    let execution = if a.sequential { Execution::Sequential } else { Execution::default() };
    let t0 = a.t0.unwrap_or(default_t0(a.scenario.scenario));
    let text = match a.kind {
        SimKind::Sweep => {
            let (axis, fixed_other, default_grid) = match (a.axis, a.scenario.scenario) {
                (AxisArg::BinWidth, _) => (SweepAxis::BinWidth, t0, "0.05,0.1,0.2,0.25,0.4"),
                (AxisArg::FitInterval, ScenarioArg::Normal) => (SweepAxis::FitInterval, a.bin_width, "1,1.25,1.5,1.75,2,2.25,2.5"),
                (AxisArg::FitInterval, ScenarioArg::Chisq) => (SweepAxis::FitInterval, a.bin_width, "3,3.5,4,4.5,5,5.5,6"),
            };
            let grid = parse_list(a.grid.as_deref().unwrap_or(default_grid), "--grid")?;
            let cfg = SweepConfig { scenario: sc, n: a.n, reps: a.reps, axis, grid, fixed_other, centre, seed: a.seed, execution };
            cfg.validate().map_err(usage_on_invalid)?;
            let r = run_sweep(&cfg)?;
            let mut csv = Csv::new(&[
                "grid_value", "parameter", "truth", "mean", "bias", "sd", "variance", "mse", "mean_se", "coverage", "count", "failures",
            ]);
            for p in &r.points {
                for s in &p.params {
                    csv.row(&[
                        num(p.value),
                        s.name.clone(),
                        num(s.truth),
                        num(s.mean),
                        num(s.bias),
                        num(s.sd),
                        num(s.variance),
                        num(s.mse),
                        num(s.mean_se),
                        num(s.coverage),
                        s.count.to_string(),
                        p.failures.to_string(),
                    ]);
                }
            }
            csv.into_string()
        }
        SimKind::FdrCurves => {
            let cfg = FdrExperimentConfig {
                scenario: sc,
                n: a.n,
                reps: a.reps,
                bin_width: a.bin_width,
                t0,
                centre,
                empirical_null: a.empirical_null,
                seed: a.seed,
                execution,
            };
            let r = fdr_bias_experiment(&cfg).map_err(usage_on_invalid)?;
            let mut header: Vec<String> = vec!["t".into(), "lambda".into(), "in_fit_interval".into()];
            for side in ["local", "right"] {
                header.extend(["true", "zeta", "mean", "mean_se", "sd", "p05", "p95", "defined"].iter().map(|c| format!("{side}_{c}")));
            }
            header.push("failures".into());
            let mut csv = Csv::new(&header);
            for k in 0..r.centers.len() {
                let mut row = vec![num(r.centers[k]), num(r.lambda[k]), r.in_fit_interval[k].to_string()];
                for (truth, zeta, s) in [(&r.true_local, &r.zeta_local, &r.local), (&r.true_right, &r.zeta_right, &r.right)] {
                    row.extend([
                        num(truth[k]),
                        num(zeta[k]),
                        num(s.mean[k]),
                        num(s.mean_se[k]),
                        num(s.sd[k]),
                        num(s.p05[k]),
                        num(s.p95[k]),
                        s.defined[k].to_string(),
                    ]);
                }
                row.push(r.failures.to_string());
                csv.row(&row);
            }
            csv.into_string()
        }
    };
    emit(a.output.as_deref(), &text)
}

#[derive(Serialize)]
struct WingSummary {
    order: usize,
    estimate: f64,
    top_eigenvalue: f64,
    second_eigenvalue: f64,
    second_ratio: f64,
    cosine: f64,
    wing_norm: f64,
    eigenvalues: Vec<f64>,
}

pub fn wing(a: &WingArgs) -> CliResult<()> {
    let fit = load_fit(&a.fit, &a.input)?;
    let k = fit.design.num_bins();
    let perm = read_perm_cov(&a.perm_cov, k)?;
    let order = a.order.unwrap_or(if chisq_based(fit.family()) { 1 } else { 2 });
    if order == 0 {
        return Err(CliError::Usage("--order must be at least 1".into()));
    }
    let est = estimate_correlation_moment(&perm, &fit, order)?;
    let unit = est.wing.unit()?;
    let lambda = null_expected_counts(&fit)?;
    let pairs = top_eigenpairs(&perm.matrix, a.eigenpairs.min(k));
    // Sign each eigenvector to point along the wing vector.
    let vectors: Vec<Vec<f64>> = pairs
        .iter()
        .map(|(_, v)| {
            let dot: f64 = v.iter().zip(&unit).map(|(x, y)| x * y).sum();
            let s = if dot < 0.0 { -1.0 } else { 1.0 };
            v.iter().map(|x| x * s).collect()
        })
        .collect();
    let mut header = vec!["t".to_string(), "lambda".into(), "wing".into(), "wing_unit".into()];
    header.extend((1..=vectors.len()).map(|i| format!("eigvec_{i}")));
    let mut csv = Csv::new(&header);
    for i in 0..k {
        let mut row = vec![num(fit.design.centers[i]), num(lambda[i]), num(est.wing.vector[i]), num(unit[i])];
        row.extend(vectors.iter().map(|v| num(v[i])));
        csv.row(&row);
    }
    emit(a.output.as_deref(), &csv.into_string())?;
    if let Some(path) = &a.summary {
        let s = WingSummary {
            order,
            estimate: est.estimate,
            top_eigenvalue: est.top_eigenvalue,
            second_eigenvalue: est.second_eigenvalue,
            second_ratio: est.second_ratio,
            cosine: est.cosine,
            wing_norm: est.wing.norm(),
            eigenvalues: pairs.iter().map(|p| p.0).collect(),
        };
        let mut text = serde_json::to_string_pretty(&s).map_err(|e| CliError::Numerical(e.to_string()))?;
        text.push('\n');
        emit(Some(path), &text)?;
    }
    Ok(())
}

fn parse_from(s: &str) -> CliResult<InputDistribution> {
    let bad = || CliError::Usage(format!("--from must be t:<df> or f:<d1>,<d2>, got {s:?}"));
    let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
    let nums = parse_list(rest, "--from").map_err(|_| bad())?;
    if nums.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(CliError::Usage(format!("degrees of freedom in {s:?} must be positive")));
    }
    match (kind, nums.as_slice()) {
        ("t", [df]) => Ok(InputDistribution::StudentT { df: *df }),
        ("f", [d1, d2]) => Ok(InputDistribution::FisherF { d1: *d1, d2: *d2 }),
        _ => Err(bad()),
    }
}

pub fn transform(a: &TransformArgs) -> CliResult<()> {
    let from = parse_from(&a.from)?;
    let Statistics { values, .. } = read_statistics(&a.input.input, &a.input.format()?)?;
    let out = quantile_transform(from, &values)?;
    let mut text = String::with_capacity(out.len() * 24);
    for v in out {
        text.push_str(&num(v));
        text.push('\n');
    }
    emit(a.output.as_deref(), &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_origin_aligns_with_interval() {
        let fam = FamilySpec::new(FamilyKind::NormalFull).unwrap();
        let spec = histogram_layout(&[-3.33, 0.0, 2.2], &fam, 0.1, (-1.0, 1.0), None).unwrap();
        assert!((spec.origin - -3.4).abs() < 1e-12);
        assert!(spec.upper() > 2.2);
        let chi = FamilySpec::new(FamilyKind::ChiSqFull).unwrap();
        assert_eq!(histogram_layout(&[0.5, 9.0], &chi, 0.1, (0.0, 4.0), None).unwrap().origin, 0.0);
        assert!(histogram_layout(&[0.5], &chi, 0.1, (0.0, 4.0), Some(1.0)).is_err());
    }

    #[test]
    fn from_flag() {
        assert_eq!(parse_from("t:5").unwrap(), InputDistribution::StudentT { df: 5.0 });
        assert_eq!(parse_from("f:2,20").unwrap(), InputDistribution::FisherF { d1: 2.0, d2: 20.0 });
        assert!(parse_from("f:2").is_err());
        assert!(parse_from("z:1").is_err());
        assert!(parse_from("t:0").is_err());
    }
}
