#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use empnull::bias::MixtureScenario;
use empnull::histogram::{build_histogram, HistogramSpec};
use empnull::par::stream_rng;
use empnull::sim::{equicorrelated_chisq, generate};

pub fn empnull(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_empnull")).args(args).output().expect("spawn empnull")
}

/// Runs and asserts success, returning standard output.
pub fn ok(args: &[&str]) -> Vec<u8> {
    let out = empnull(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

pub fn code(args: &[&str]) -> i32 {
    empnull(args).status.code().expect("exit code")
}

pub fn write_values(path: &Path, values: &[f64]) {
    let text: String = values.iter().map(|v| format!("{v}\n")).collect();
    fs::write(path, text).unwrap();
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Working files for a normal and a χ² data set.
pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub normal: PathBuf,
    pub chisq: PathBuf,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let normal = dir.path().join("z.txt");
        let chisq = dir.path().join("chisq.txt");
        write_values(&normal, &generate(&MixtureScenario::normal_shift(0.9).unwrap(), 20_000, 5));
        write_values(&chisq, &generate(&MixtureScenario::chisq_noncentral(0.9).unwrap(), 20_000, 6));
        Self { dir, normal, chisq }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

/// Permutation-style replicate histograms of correlated χ²(2) statistics on
/// `num_bins` bins of width `bin_width` from 0, one CSV row per replicate.
pub fn replicate_rows(path: &Path, bin_width: f64, num_bins: usize, n: usize, rho: f64, reps: usize, seed: u64) {
    let spec = HistogramSpec::new(0.0, bin_width, num_bins).unwrap();
    let mut text = String::new();
    for r in 0..reps {
        let mut rng = stream_rng(seed, &[r as u64]);
        let h = build_histogram(&equicorrelated_chisq(n, 2, 1.0, rho, &mut rng), spec).unwrap();
        let row: Vec<String> = h.counts.iter().map(|c| c.to_string()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}
