//! Two-column plot tables.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Rows `(x, y)` with strictly increasing, finite `x` and finite `y`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    rows: Vec<(f64, f64)>,
}

impl Table {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64, y: f64) -> Result<()> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Config(format!("non-finite table row ({x}, {y})")));
        }
        if let Some(&(last, _)) = self.rows.last() {
            if x <= last {
                return Err(Error::Config(format!("table x must increase: {x} after {last}")));
            }
        }
        self.rows.push((x, y));
        Ok(())
    }

    pub fn rows(&self) -> &[(f64, f64)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// One `"%.6f %.6f\n"` line per row.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (x, y) in &self.rows {
            writeln!(out, "{x:.6} {y:.6}").unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut table = Self::new();
        for (n, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) => table.push(x, y)?,
                _ => {
                    return Err(Error::Parse {
                        line: n + 1,
                        message: format!("expected two numbers, got {line:?}"),
                    })
                }
            }
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_and_parse() {
        let mut t = Table::new();
        t.push(0.0, 1.0).unwrap();
        t.push(0.01, 0.919_191_919).unwrap();
        assert_eq!(t.to_text(), "0.000000 1.000000\n0.010000 0.919192\n");
        assert_eq!(Table::parse(&t.to_text()).unwrap().rows()[1], (0.01, 0.919192));
        assert!(t.push(0.01, 0.0).is_err());
        assert!(t.push(0.02, f64::NAN).is_err());
        assert!(Table::parse("1 2 3\n").is_err());
    }
}
