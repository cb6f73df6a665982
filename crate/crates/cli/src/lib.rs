//! Command-line surface for empirical null fitting.

pub mod args;
pub mod artifact;
pub mod commands;
pub mod error;
pub mod ingest;
pub mod output;

use args::{Cli, Command};
use error::CliResult;

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Fdr(a) => commands::fdr(a),
        Command::Bias(a) => commands::bias(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Wing(a) => commands::wing(a),
        Command::Transform(a) => commands::transform(a),
    }
}
