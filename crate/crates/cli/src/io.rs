//! Output formatting and input parsing for the point-cloud files.
//!
//! Floats are printed with 17 significant digits so write-then-read is
//! lossless; infinities print as `inf`/`-inf`, which Rust's float parser
//! accepts back.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use variety_core::poly::PolySystem;

pub fn format_value(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".to_string() } else { "-inf".to_string() };
    }
    format!("{v:.16e}")
}

/// 64-bit FNV-1a. Used to fingerprint the canonical system text in run
/// summaries so downstream files can be matched to the system that made
/// them without shipping the whole spec around.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Canonical, whitespace-stable description of a system: variable list plus
/// every polynomial in its normalized display form.
pub fn canonical_system_text(sys: &PolySystem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "vars {}", sys.context().names().join(","));
    for p in sys.equalities() {
        let _ = writeln!(out, "poly {p}");
    }
    for p in sys.inequalities() {
        let _ = writeln!(out, "ineq {p}");
    }
    out
}

pub fn system_hash(sys: &PolySystem) -> String {
    format!("{:016x}", fnv1a64(canonical_system_text(sys).as_bytes()))
}

pub fn write_csv<W: Write>(
    mut w: W,
    header: &[String],
    rows: impl Iterator<Item = Vec<String>>,
) -> io::Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[derive(Debug)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Physical 1-based line number of each row, for error reporting.
    line_numbers: Vec<usize>,
}

impl CsvTable {
    /// Column index by header name.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn parse_float(&self, row: usize, col: usize) -> Result<f64, String> {
        let cell = &self.rows[row][col];
        cell.trim().parse::<f64>().map_err(|_| {
            format!(
                "line {}: column `{}` has non-numeric value `{}`",
                self.line_numbers[row],
                self.header[col],
                cell
            )
        })
    }
}

/// Read a headered CSV. Every data row must have the header's width; the
/// error message names the first offending line. A file with no content at
/// all comes back with an empty header, which callers treat as an empty
/// point set rather than an error.
pub fn read_csv(path: &Path) -> Result<CsvTable, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    // Physical 1-based line numbers survive blank-line skipping so error
    // messages point at the actual file line.
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let header: Vec<String> = match lines.next() {
        Some((_, h)) => h.split(',').map(|s| s.trim().to_string()).collect(),
        None => {
            return Ok(CsvTable { header: Vec::new(), rows: Vec::new(), line_numbers: Vec::new() })
        }
    };
    let mut rows = Vec::new();
    let mut line_numbers = Vec::new();
    for (idx, line) in lines {
        let fields: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
        if fields.len() != header.len() {
            return Err(format!(
                "line {}: expected {} fields, found {}",
                idx + 1,
                header.len(),
                fields.len()
            ));
        }
        rows.push(fields);
        line_numbers.push(idx + 1);
    }
    Ok(CsvTable { header, rows, line_numbers })
}

/// Either a file or stdout, so `--out` can be omitted to stream results.
pub fn open_sink(out: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::BufWriter::new(io::stdout())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.0, -1.5, 1.0 / 3.0, 2.0f64.sqrt(), 1e-300, -7.25e250] {
            let s = format_value(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(format_value(f64::NEG_INFINITY), "-inf");
        assert_eq!("-inf".parse::<f64>().unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn fnv_test_vectors() {
        // Standard FNV-1a references.
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn hash_ignores_source_formatting() {
        use variety_core::poly::{Polynomial, VarContext};
        let ctx = VarContext::new(["x", "y"]).unwrap();
        let a = PolySystem::equalities_only(
            &ctx,
            vec![Polynomial::parse("x^2 + y^2 - 1", &ctx).unwrap()],
        )
        .unwrap();
        let b = PolySystem::equalities_only(
            &ctx,
            vec![Polynomial::parse("-1 + y^2 + x^2", &ctx).unwrap()],
        )
        .unwrap();
        assert_eq!(system_hash(&a), system_hash(&b));
    }
}
