//! The versioned fit artifact and the family selection strings.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use empnull::expfam::{CanonicalParams, FamilyKind, FamilySpec, ParametricDensity};
use empnull::histogram::{build_histogram, FitMask, HistogramSpec};
use empnull::nullfit::{build_design, Convergence, NullFit};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

/// Builds a family from its selection string and `key=value` fixed parameters.
pub fn parse_family(name: &str, fixed: &BTreeMap<String, f64>) -> CliResult<FamilySpec> {
    let allowed: &[&str] = match name {
        "normal" | "chisq" => &[],
        "normal:mean" => &["var"],
        "normal:var" => &["mean"],
        "chisq:scale" => &["df"],
        "chisq:df" => &["scale"],
        "p0only" => &["mean", "var", "df", "scale"],
        other => {
            return Err(CliError::Usage(format!(
                "unknown family {other:?}; expected normal, normal:mean, normal:var, chisq, chisq:scale, chisq:df or p0only"
            )))
        }
    };
    if let Some(k) = fixed.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(CliError::Usage(format!("family {name} does not take a fixed parameter {k:?}")));
    }
    let get = |k: &str, default: Option<f64>| -> CliResult<f64> {
        fixed
            .get(k)
            .copied()
            .or(default)
            .ok_or_else(|| CliError::Usage(format!("family {name} needs --fix-params {k}=<value>")))
    };
    let kind = match name {
        "normal" => FamilyKind::NormalFull,
        "chisq" => FamilyKind::ChiSqFull,
        "normal:mean" => FamilyKind::NormalMeanOnly { var: get("var", Some(1.0))? },
        "normal:var" => FamilyKind::NormalVarOnly { mean: get("mean", Some(0.0))? },
        "chisq:scale" => FamilyKind::ChiSqScaleOnly { df: get("df", None)? },
        "chisq:df" => FamilyKind::ChiSqDfOnly { scale: get("scale", Some(1.0))? },
        _ => {
            let normal = fixed.contains_key("mean") || fixed.contains_key("var");
            let chisq = fixed.contains_key("df") || fixed.contains_key("scale");
            let null = match (normal, chisq) {
                (true, true) => return Err(CliError::Usage("p0only takes either mean/var or df/scale, not both".into())),
                (true, false) => ParametricDensity::Normal { mean: get("mean", Some(0.0))?, var: get("var", Some(1.0))? },
                (false, _) => ParametricDensity::ScaledChiSq { scale: get("scale", Some(1.0))?, df: get("df", None)? },
            };
            FamilyKind::InterceptOnly { null }
        }
    };
    FamilySpec::new(kind).map_err(|e| CliError::Usage(e.to_string()))
}

/// Parses `k=v[,k=v…]` items.
pub fn parse_fixed(items: &[String]) -> CliResult<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for item in items.iter().flat_map(|s| s.split(',')).filter(|s| !s.trim().is_empty()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected key=value, got {item:?}")))?;
        let v: f64 = v.trim().parse().map_err(|_| CliError::Usage(format!("bad value in {item:?}")))?;
        out.insert(k.trim().to_string(), v);
    }
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyRecord {
    pub name: String,
    pub fixed: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRecord {
    pub origin: f64,
    pub bin_width: f64,
    pub num_bins: usize,
    pub total: u64,
    pub out_of_range: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub requested: [f64; 2],
    /// Widened outward to bin edges.
    pub snapped: [f64; 2],
}

/// Covariances of (Ĉ, η̂) and (log p̂₀, θ̂), rows as arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCovRecord {
    pub eta_plus: Vec<Vec<f64>>,
    pub theta_plus: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRecord {
    pub replicates: usize,
    pub failures: usize,
    pub seed: u64,
    pub eta_plus: Vec<Vec<f64>>,
    pub theta_plus: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceRecord {
    pub multinomial: ParamCovRecord,
    pub permutation: Option<ParamCovRecord>,
    pub bootstrap: Option<BootstrapRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub iterations: usize,
    pub score_norm: f64,
    pub deviance: f64,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub input_sha256: String,
    pub n_statistics: usize,
    pub seed: Option<u64>,
    pub tool_version: String,
}

/// Everything a fit produced, enough to rebuild it from the statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub schema_version: u32,
    pub family: FamilyRecord,
    pub histogram: HistogramRecord,
    pub fit_interval: IntervalRecord,
    /// Labels of `theta_plus`; `eta_plus` is (intercept, η).
    pub parameters: Vec<String>,
    pub eta_plus: Vec<f64>,
    pub theta_plus: Vec<f64>,
    pub covariance: CovarianceRecord,
    pub fitted_counts: Vec<f64>,
    pub overdispersion: Option<f64>,
    pub convergence: ConvergenceRecord,
    pub provenance: Provenance,
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl FitArtifact {
    pub fn render(&self) -> CliResult<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| CliError::Numerical(format!("cannot serialize artifact: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Data(format!("artifact is not valid JSON: {e}")))?;
        match v.get("schema_version").and_then(|s| s.as_u64()) {
            Some(n) if n == SCHEMA_VERSION as u64 => {}
            Some(n) => return Err(CliError::Data(format!("artifact schema version {n}, this tool reads {SCHEMA_VERSION}"))),
            None => return Err(CliError::Data("artifact has no schema_version".into())),
        }
        serde_json::from_value(v).map_err(|e| CliError::Data(format!("malformed artifact: {e}")))
    }

    pub fn family_spec(&self) -> CliResult<FamilySpec> {
        parse_family(&self.family.name, &self.family.fixed).map_err(|e| CliError::Data(format!("artifact family: {e}")))
    }

    pub fn histogram_spec(&self) -> CliResult<HistogramSpec> {
        Ok(HistogramSpec::new(self.histogram.origin, self.histogram.bin_width, self.histogram.num_bins)?)
    }

    /// Re-bins the statistics and restores the stored fit without solving.
    pub fn restore(&self, statistics: &[f64], bytes: &[u8]) -> CliResult<NullFit> {
        let digest = sha256_hex(bytes);
        if digest != self.provenance.input_sha256 {
            return Err(CliError::Data(format!(
                "input digest {digest} does not match the artifact's {}",
                self.provenance.input_sha256
            )));
        }
        let spec = self.histogram_spec()?;
        let h = build_histogram(statistics, spec)?;
        let [lo, hi] = self.fit_interval.requested;
        let mask = FitMask::from_interval(&spec, lo, hi)?;
        let design = build_design(&h, &self.family_spec()?, &mask)?;
        let c = &self.convergence;
        let conv = Convergence { iterations: c.iterations, score_norm: c.score_norm, deviance: c.deviance, trace: c.trace.clone() };
        Ok(NullFit::from_estimate(design, h.counts_f64(), CanonicalParams::from_slice(&self.eta_plus), conv)?)
    }
}
