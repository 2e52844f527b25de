//! CSV input and fixed-format output.

use std::path::Path;

use crate::error::CliError;

/// Nine significant digits, scientific notation.
pub fn num(x: f64) -> String {
    format!("{x:.8e}")
}

/// A header-indexed CSV file held in memory.
pub struct Table {
    source: String,
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let source = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| CliError::Input(format!("{source}: {e}")))?;
        let headers = reader
            .headers()
            .map_err(|e| CliError::Input(format!("{source}: {e}")))?
            .iter()
            .map(|h| h.to_ascii_lowercase())
            .collect();
        let rows = reader
            .records()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Input(format!("{source}: {e}")))?;
        Ok(Self { source, headers, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn column(&self, name: &str) -> Result<usize, CliError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Input(format!("{}: missing column '{name}'", self.source)))
    }

    pub fn optional_column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn text(&self, row: usize, col: usize) -> &str {
        self.rows[row].get(col).unwrap_or("")
    }

    pub fn float(&self, row: usize, col: usize) -> Result<f64, CliError> {
        let cell = self.text(row, col);
        cell.parse::<f64>().map_err(|_| {
            CliError::Input(format!(
                "{}: row {}, column '{}': '{cell}' is not a number",
                self.source,
                row + 2,
                self.headers[col]
            ))
        })
    }

    pub fn floats(&self, name: &str) -> Result<Vec<f64>, CliError> {
        let col = self.column(name)?;
        (0..self.len()).map(|r| self.float(r, col)).collect()
    }

    pub fn error(&self, row: usize, msg: impl std::fmt::Display) -> CliError {
        CliError::Input(format!("{}: row {}: {msg}", self.source, row + 2))
    }
}

/// Writes to `out`, or stdout when no path is given. Called once, after all
/// computation succeeded.
pub fn emit(out: Option<&Path>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, content)?,
        None => print!("{content}"),
    }
    Ok(())
}
