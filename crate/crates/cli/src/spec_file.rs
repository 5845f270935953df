//! Plain-text system descriptions.
//!
//! ```text
//! # a unit circle, sampled tightly
//! vars x, y
//! poly x^2 + y^2 - 1
//! sigma 0.05
//! box -1.5,1.5
//! ```
//!
//! One `vars` line, then any number of `poly` (equality) and `ineq`
//! (nonnegativity) lines, plus optional `sigma`, `box`, and `truncate`
//! settings. `#` starts a comment anywhere on a line. Errors carry the
//! 1-based line and column they were found at.

use thiserror::Error;
use variety_core::poly::{PolyError, PolySystem, Polynomial, VarContext};
use variety_core::AxisBox;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}, column {column}: {message}")]
pub struct SpecFileError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl SpecFileError {
    fn new(line: usize, column: usize, message: impl Into<String>) -> Self {
        SpecFileError { line, column, message: message.into() }
    }
}

#[derive(Debug, Clone)]
pub struct SpecFile {
    pub system: PolySystem,
    pub sigma: Option<f64>,
    pub bounds: Option<AxisBox>,
    pub truncate: Option<AxisBox>,
}

/// Translate a polynomial parse failure inside `expr` (which starts at
/// 1-based `expr_col` of `line_no`) into file coordinates.
fn expr_error(err: PolyError, line_no: usize, expr_col: usize) -> SpecFileError {
    match err {
        PolyError::Parse { position, message } => {
            SpecFileError::new(line_no, expr_col + position, message)
        }
        PolyError::UnknownVariable { name, position } => {
            SpecFileError::new(line_no, expr_col + position, format!("unknown variable `{name}`"))
        }
        other => SpecFileError::new(line_no, expr_col, other.to_string()),
    }
}

fn parse_box(rest: &str, line_no: usize, col: usize, what: &str) -> Result<AxisBox, SpecFileError> {
    let vals: Vec<f64> = rest
        .split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|_| {
                SpecFileError::new(line_no, col, format!("{what} expects numbers, got `{}`", s.trim()))
            })
        })
        .collect::<Result<_, _>>()?;
    if vals.is_empty() || vals.len() % 2 != 0 {
        return Err(SpecFileError::new(
            line_no,
            col,
            format!("{what} expects lo,hi pairs, got {} values", vals.len()),
        ));
    }
    let (lo, hi): (Vec<f64>, Vec<f64>) =
        vals.chunks(2).map(|c| (c[0], c[1])).unzip();
    AxisBox::new(lo, hi).map_err(|e| SpecFileError::new(line_no, col, e.to_string()))
}

/// Broadcast a single lo,hi pair across `dim` axes; pass per-axis boxes
/// through after checking the dimension.
pub fn broadcast_box(b: &AxisBox, dim: usize) -> Option<AxisBox> {
    if b.dim() == dim {
        return Some(b.clone());
    }
    if b.dim() == 1 {
        return AxisBox::cube(b.lo()[0], b.hi()[0], dim).ok();
    }
    None
}

pub fn parse_spec_file(text: &str) -> Result<SpecFile, SpecFileError> {
    let mut ctx: Option<VarContext> = None;
    let mut pending_polys: Vec<(String, usize, usize)> = Vec::new();
    let mut pending_ineqs: Vec<(String, usize, usize)> = Vec::new();
    let mut sigma = None;
    let mut bounds = None;
    let mut truncate = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        if line.trim().is_empty() {
            continue;
        }
        let keyword_start = line.len() - line.trim_start().len();
        let trimmed = line.trim();
        let (keyword, rest) = match trimmed.split_once(char::is_whitespace) {
            Some((k, r)) => (k, r.trim()),
            None => (trimmed, ""),
        };
        // 1-based column where the argument text begins.
        let rest_col = match rest.len() {
            0 => keyword_start + keyword.len() + 1,
            _ => line.rfind(rest).unwrap() + 1,
        };

        match keyword {
            "vars" => {
                if ctx.is_some() {
                    return Err(SpecFileError::new(line_no, keyword_start + 1, "second `vars` line"));
                }
                let names: Vec<&str> = rest
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .collect();
                let parsed = VarContext::new(names)
                    .map_err(|e| SpecFileError::new(line_no, rest_col, e.to_string()))?;
                ctx = Some(parsed);
            }
            "poly" => pending_polys.push((rest.to_string(), line_no, rest_col)),
            "ineq" => pending_ineqs.push((rest.to_string(), line_no, rest_col)),
            "sigma" => {
                let v: f64 = rest.parse().map_err(|_| {
                    SpecFileError::new(line_no, rest_col, format!("sigma expects a number, got `{rest}`"))
                })?;
                if !(v > 0.0) || !v.is_finite() {
                    return Err(SpecFileError::new(line_no, rest_col, "sigma must be positive"));
                }
                sigma = Some(v);
            }
            "box" => bounds = Some(parse_box(rest, line_no, rest_col, "box")?),
            "truncate" => truncate = Some(parse_box(rest, line_no, rest_col, "truncate")?),
            other => {
                return Err(SpecFileError::new(
                    line_no,
                    keyword_start + 1,
                    format!("unknown keyword `{other}` (expected vars, poly, ineq, sigma, box, or truncate)"),
                ));
            }
        }
    }

    let ctx = ctx.ok_or_else(|| SpecFileError::new(1, 1, "missing `vars` line"))?;
    if pending_polys.is_empty() && pending_ineqs.is_empty() {
        return Err(SpecFileError::new(1, 1, "no `poly` or `ineq` lines"));
    }

    let parse_all = |list: &[(String, usize, usize)]| -> Result<Vec<Polynomial>, SpecFileError> {
        list.iter()
            .map(|(src, ln, col)| {
                Polynomial::parse(src, &ctx).map_err(|e| expr_error(e, *ln, *col))
            })
            .collect()
    };
    let eqs = parse_all(&pending_polys)?;
    let ineqs = parse_all(&pending_ineqs)?;
    let system = PolySystem::new(&ctx, eqs, ineqs)
        .map_err(|e| SpecFileError::new(1, 1, e.to_string()))?;

    Ok(SpecFile { system, sigma, bounds, truncate })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_file_parses() {
        let spec = parse_spec_file(
            "# disc with a breathing room box\n\
             vars x, y\n\
             ineq 1 - x^2 - y^2\n\
             sigma 0.05\n\
             box -1.5,1.5\n\
             truncate -2,2\n",
        )
        .unwrap();
        assert_eq!(spec.system.n_vars(), 2);
        assert_eq!(spec.system.inequalities().len(), 1);
        assert_eq!(spec.sigma, Some(0.05));
        assert_eq!(spec.bounds.as_ref().unwrap().dim(), 1);
        assert!(spec.truncate.is_some());
    }

    #[test]
    fn expression_errors_carry_file_coordinates() {
        let err = parse_spec_file("vars x, y\npoly x^2 + w\n").unwrap_err();
        assert_eq!(err.line, 2);
        // `w` sits at column 12 of "poly x^2 + w".
        assert_eq!(err.column, 12);
        assert!(err.message.contains('w'), "{err}");

        let err = parse_spec_file("vars x\npoly x^^2\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.column > 6, "{err}");
    }

    #[test]
    fn structural_errors() {
        assert!(parse_spec_file("poly x\n").unwrap_err().message.contains("vars"));
        assert!(parse_spec_file("vars x\n").unwrap_err().message.contains("poly"));
        let err = parse_spec_file("vars x\nvars y\npoly x\n").unwrap_err();
        assert_eq!((err.line, err.column), (2, 1));
        let err = parse_spec_file("vars x\nquux x\n").unwrap_err();
        assert!(err.message.contains("quux"));
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let spec = parse_spec_file(
            "\n# heading\nvars x , y  # trailing\n\npoly x^2 + y^2 - 1 # the circle\n",
        )
        .unwrap();
        assert_eq!(spec.system.n_equalities(), 1);
        assert_eq!(spec.system.context().names(), ["x", "y"]);
    }

    #[test]
    fn box_wants_pairs() {
        let err = parse_spec_file("vars x\npoly x\nbox 1,2,3\n").unwrap_err();
        assert!(err.message.contains("pairs"), "{err}");
        let spec = parse_spec_file("vars x, y\npoly x\nbox -1,1,-2,2\n").unwrap();
        let b = spec.bounds.unwrap();
        assert_eq!((b.lo()[1], b.hi()[1]), (-2.0, 2.0));
    }

    #[test]
    fn broadcast_rules() {
        let one = AxisBox::cube(-1.0, 1.0, 1).unwrap();
        assert_eq!(broadcast_box(&one, 3).unwrap().dim(), 3);
        let two = AxisBox::cube(-1.0, 1.0, 2).unwrap();
        assert_eq!(broadcast_box(&two, 2).unwrap().dim(), 2);
        assert!(broadcast_box(&two, 3).is_none());
    }
}
