use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{CliError, CliResult};

/// 17 significant digits, enough to round-trip any f64.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "NA".to_string()
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "NA".to_string())
}

/// Comma-joined CSV built row by row. Fields are numbers or plain labels, so no quoting.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut c = Self { text: String::new() };
        c.row(header);
        c
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) {
        let line = fields.iter().map(|f| f.as_ref()).collect::<Vec<_>>().join(",");
        let _ = writeln!(self.text, "{line}");
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

/// Writes to `path`, or to standard output when absent.
pub fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}
