use clap::error::ErrorKind;
use clap::Parser;

use empnull_cli::args::Cli;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            std::process::exit(code);
        }
    };
    if let Err(e) = empnull_cli::run(&cli) {
        eprintln!("empnull: {e}");
        std::process::exit(e.exit_code());
    }
}
