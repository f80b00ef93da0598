//! CSV tables and metadata sidecars.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::CliError;

/// A numeric table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
        w.write_record(&self.header).map_err(|e| CliError::io(path, e))?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format_value(*v))).map_err(|e| CliError::io(path, e))?;
        }
        w.flush().map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
        let header: Vec<String> = r.headers().map_err(|e| CliError::io(path, e))?.iter().map(|s| s.trim().to_string()).collect();
        let mut table = Table { header, rows: Vec::new() };
        for (i, record) in r.records().enumerate() {
            let record = record.map_err(|e| CliError::io(path, e))?;
            let row = record
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| CliError::Config(format!("{}: row {}: {e}", path.display(), i + 1)))?;
            table.rows.push(row);
        }
        Ok(table)
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_value(v: f64) -> String {
    // −0 prints as 0
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.16e}")
}

/// `<path>.meta`, next to the CSV.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta");
    PathBuf::from(s)
}

/// `dir/stem_suffix.csv` for auxiliary outputs.
pub fn sibling_path(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "csv".into());
    path.with_file_name(format!("{stem}_{suffix}.{ext}"))
}

pub fn write_meta(path: &Path, pairs: &[(String, String)]) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    for (k, v) in pairs {
        writeln!(f, "{k}={v}").map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}
