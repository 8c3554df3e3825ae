//! Matrix CSV files and JSON output.
//!
//! A matrix file starts with `# rows cols`, followed by one comma-separated
//! line per row. Values are written with 17 significant digits so they read
//! back bit-for-bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Matrix;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), msg: msg.into() }
}

pub fn format_csv(m: &Matrix) -> String {
    let mut out = format!("# {} {}\n", m.rows(), m.cols());
    for r in 0..m.rows() {
        for (j, v) in m.row(r).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            // Normalize negative zero so files do not depend on its sign.
            let v = if *v == 0.0 { 0.0 } else { *v };
            write!(out, "{v:.16e}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

/// Parses the CSV text. The result is tagged nonnegative when every entry
/// is `≥ 0`, signed otherwise.
pub fn parse_csv(text: &str, path: &Path) -> Result<Matrix> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| parse_err(path, "empty file"))?;
    let dims: Vec<&str> = header
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| parse_err(path, "first line must be `# rows cols`"))?
        .split_whitespace()
        .collect();
    if dims.len() != 2 {
        return Err(parse_err(path, "first line must be `# rows cols`"));
    }
    let parse_dim = |s: &str| s.parse::<usize>().map_err(|_| parse_err(path, format!("bad dimension `{s}`")));
    let (rows, cols) = (parse_dim(dims[0])?, parse_dim(dims[1])?);
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (i, line) in lines.enumerate() {
        seen += 1;
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, format!("line {}: bad number `{}`", i + 2, field.trim())))?;
            if !v.is_finite() {
                return Err(parse_err(path, format!("line {}: non-finite value", i + 2)));
            }
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(parse_err(path, format!("line {}: expected {cols} values, found {}", i + 2, data.len() - before)));
        }
    }
    if seen != rows {
        return Err(parse_err(path, format!("expected {rows} rows, found {seen}")));
    }
    if data.iter().all(|v| *v >= 0.0) {
        Matrix::nonneg(rows, cols, data)
    } else {
        Matrix::signed(rows, cols, data)
    }
}

pub fn write_csv(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, format_csv(m)).map_err(|e| io_err(path, e))
}

pub fn read_csv(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_csv(&text, path)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let m = Matrix::signed(2, 3, vec![0.1, -1e-300, 1.0 / 3.0, 123456.789, 0.0, f64::MAX]).unwrap();
        let back = parse_csv(&format_csv(&m), Path::new("mem")).unwrap();
        assert_eq!(back.data(), m.data());
        assert!(!back.is_nonneg());
        let nn = Matrix::nonneg(1, 2, vec![0.5, 2.0]).unwrap();
        assert!(parse_csv(&format_csv(&nn), Path::new("mem")).unwrap().is_nonneg());
    }

    #[test]
    fn format_has_header_and_17_digits() {
        let m = Matrix::nonneg(1, 1, vec![0.1]).unwrap();
        assert_eq!(format_csv(&m), "# 1 1\n1.0000000000000001e-1\n");
    }

    #[test]
    fn malformed_inputs() {
        let p = Path::new("bad.csv");
        for text in ["", "1 2\n1,2\n", "# 1 2\n1\n", "# 2 1\n1\n", "# 1 1\nx\n", "# 1 1\nNaN\n"] {
            assert!(matches!(parse_csv(text, p), Err(Error::Parse { .. })), "{text:?}");
        }
    }
}
