use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{CliError, CliResult};
use crate::ingest::InputFormat;

#[derive(Debug, Parser)]
#[command(name = "empnull", version, about = "Empirical null fitting and FDR estimation for large-scale testing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an exponential-family empirical null to the histogram of the statistics
    /// by Poisson regression over the fitting interval, with delta-method covariances.
    Fit(FitArgs),
    /// Local and tail FDR curves with log-scale delta-method bands.
    Fdr(FdrArgs),
    /// Large-N bias of the fitted null under a simulation scenario, exact and first order.
    Bias(BiasArgs),
    /// Monte-Carlo tuning sweeps or fdr bias curves.
    Simulate(SimulateArgs),
    /// Wing vectors and the top eigenpairs of a permutation covariance.
    Wing(WingArgs),
    /// Map t or F statistics to normal or chi-square scores by matching probabilities.
    Transform(TransformArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Plain,
    Csv,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Statistics file.
    #[arg(long)]
    pub input: PathBuf,
    /// plain: one value per line, `#` comments allowed; csv: header row plus --column.
    #[arg(long, value_enum, default_value = "plain")]
    pub format: FormatArg,
    /// Column holding the statistics when --format csv.
    #[arg(long)]
    pub column: Option<String>,
}

impl InputArgs {
    pub fn format(&self) -> CliResult<InputFormat> {
        match (self.format, &self.column) {
            (FormatArg::Plain, None) => Ok(InputFormat::Plain),
            (FormatArg::Plain, Some(_)) => Err(CliError::Usage("--column needs --format csv".into())),
            (FormatArg::Csv, Some(c)) => Ok(InputFormat::Csv { column: c.clone() }),
            (FormatArg::Csv, None) => Err(CliError::Usage("--format csv needs --column".into())),
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// normal, normal:mean, normal:var, chisq, chisq:scale, chisq:df or p0only.
    #[arg(long)]
    pub family: String,
    #[command(flatten)]
    pub input: InputArgs,
    /// Histogram bin width.
    #[arg(long)]
    pub bin_width: f64,
    /// Fitting interval lo,hi; widened outward to bin edges.
    #[arg(long, allow_hyphen_values = true)]
    pub fit_interval: String,
    /// Left edge of the first bin. Defaults to 0 for chi-square nulls, otherwise
    /// to an edge aligned with the interval's lower end below the smallest statistic.
    #[arg(long, allow_hyphen_values = true)]
    pub origin: Option<f64>,
    /// Fixed parameters as key=value: var (normal:mean), mean (normal:var),
    /// df (chisq:scale), scale (chisq:df); p0only takes mean,var or df,scale.
    #[arg(long = "fix-params", num_args = 1..)]
    pub fix_params: Vec<String>,
    /// Permutation covariance: replicate histograms one per row, or `matrix` then K rows.
    #[arg(long)]
    pub perm_cov: Option<PathBuf>,
    /// Bootstrap replicates for a resampling covariance of the parameters.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Artifact path; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FdrArgs {
    /// Fit artifact written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Permutation covariance for the bands instead of the multinomial one.
    #[arg(long)]
    pub perm_cov: Option<PathBuf>,
    /// Add the expected complete-null fdr and the adjusted fdr columns.
    #[arg(long)]
    pub adjust_zeta: bool,
    /// Normal quantile for the bands.
    #[arg(long, default_value_t = 1.959_963_984_540_054)]
    pub z: f64,
    /// Cap reported fdr values and bands at 1. Estimates are uncapped otherwise.
    #[arg(long)]
    pub cap: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    /// 0.9 N(0.2, 1.2²) + 0.1 N(3, 1.2²) by default.
    Normal,
    /// 0.8χ²(3) null against noncentral χ²(3, 3).
    Chisq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CentreArg {
    /// Normal fitting interval around the scenario's null mean.
    NullMean,
    /// Normal fitting interval around 0.
    Zero,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long, value_enum)]
    pub scenario: ScenarioArg,
    /// Null proportion.
    #[arg(long, default_value_t = 0.9)]
    pub p0: f64,
    #[arg(long, value_enum, default_value = "null-mean")]
    pub centre: CentreArg,
}

#[derive(Debug, Args)]
pub struct BiasArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value_t = 0.1)]
    pub bin_width: f64,
    /// Half-width of a normal fitting interval, or its upper end for chi-square.
    #[arg(long)]
    pub t0: f64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimKind {
    /// Parameter summaries over a grid of bin widths or interval widths.
    Sweep,
    /// Per-bin fdr and right-tail FDR estimates on Poisson bin counts.
    FdrCurves,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    BinWidth,
    FitInterval,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "sweep")]
    pub kind: SimKind,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Statistics per replicate.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Sweep axis.
    #[arg(long, value_enum, default_value = "fit-interval")]
    pub axis: AxisArg,
    /// Comma-separated grid for the swept parameter.
    #[arg(long)]
    pub grid: Option<String>,
    /// Bin width (fdr curves, interval sweeps).
    #[arg(long, default_value_t = 0.1)]
    pub bin_width: f64,
    /// Interval width t0 (fdr curves, bin-width sweeps).
    #[arg(long)]
    pub t0: Option<f64>,
    /// fdr curves: fit the null on every replicate instead of using the true one.
    #[arg(long)]
    pub empirical_null: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run replicates on one thread.
    #[arg(long)]
    pub sequential: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WingArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub perm_cov: PathBuf,
    /// Polynomial order of the wing vector; 1 for chi-square, 2 for normal by default.
    #[arg(long)]
    pub order: Option<usize>,
    /// Number of eigenvectors written.
    #[arg(long, default_value_t = 2)]
    pub eigenpairs: usize,
    /// CSV of per-bin vectors.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// JSON with the eigenvalues, cosine and correlation-moment estimate.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    /// t:<df> maps to N(0,1); f:<d1>,<d2> maps to χ²(d1).
    #[arg(long)]
    pub from: String,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Parses `lo,hi`.
pub fn parse_pair(s: &str, what: &str) -> CliResult<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').collect();
    let bad = || CliError::Usage(format!("{what} must be lo,hi, got {s:?}"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    if !(lo < hi) {
        return Err(bad());
    }
    Ok((lo, hi))
}

pub fn parse_list(s: &str, what: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("bad number {x:?} in {what}"))))
        .collect()
}
