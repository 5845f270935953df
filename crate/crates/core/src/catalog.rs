//! Named builders for the benchmark systems used throughout the tests and
//! the CLI: classic plane curves, a few surfaces, statistical models, and
//! the Kuramoto steady-state system.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::batch::AxisBox;
use crate::poly::{PolyError, PolySystem, Polynomial, VarContext};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
    #[error("invalid parameter for `{system}`: {reason}")]
    InvalidParam { system: &'static str, reason: String },
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// A catalog system plus the sampling defaults that work well for it.
#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub name: &'static str,
    /// Resolved builder parameters, defaults included.
    pub params: Vec<(&'static str, f64)>,
    pub system: PolySystem,
    pub recommended_box: Option<AxisBox>,
    pub recommended_sigma: Option<f64>,
}

/// Catalog names accepted by [`build`].
pub fn names() -> &'static [&'static str] {
    &[
        "circle",
        "alpha_minus",
        "alpha_plus",
        "lemniscate",
        "lissajous6",
        "ellipse_pinch",
        "whitney",
        "torus",
        "sphere_plane",
        "circle_plane",
        "zero_dim",
        "independence2x2",
        "disc",
        "kuramoto",
    ]
}

fn ctx2() -> VarContext {
    VarContext::new(["x", "y"]).expect("valid names")
}

fn ctx3() -> VarContext {
    VarContext::new(["x", "y", "z"]).expect("valid names")
}

fn parse_all(ctx: &VarContext, sources: &[&str]) -> Result<Vec<Polynomial>, CatalogError> {
    sources.iter().map(|s| Polynomial::parse(s, ctx).map_err(CatalogError::from)).collect()
}

fn take_int(
    params: &mut BTreeMap<String, f64>,
    system: &'static str,
    key: &str,
    default: i64,
) -> Result<i64, CatalogError> {
    match params.remove(key) {
        None => Ok(default),
        Some(v) if v.fract() == 0.0 && v.is_finite() => Ok(v as i64),
        Some(v) => Err(CatalogError::InvalidParam {
            system,
            reason: format!("`{key}` must be an integer, got {v}"),
        }),
    }
}

/// Build a catalog system by name. Parameterized entries (`torus`,
/// `kuramoto`, and the `variant`-indexed families) read their parameters
/// from the map; anything left over is rejected as a typo.
pub fn build(name: &str, params: &BTreeMap<String, f64>) -> Result<CatalogEntry, CatalogError> {
    let mut p = params.clone();
    let entry = match name {
        "circle" => plane_curve("circle", "x^2 + y^2 - 1", 0.1)?,
        "alpha_minus" => plane_curve("alpha_minus", "y^2 - x^3 + x^2", 0.1)?,
        "alpha_plus" => plane_curve("alpha_plus", "y^2 - x^3 - x^2", 0.1)?,
        "lemniscate" => plane_curve("lemniscate", "(x^2 + y^2)^2 - 2*(x^2 - y^2)", 0.1)?,
        "lissajous6" => plane_curve(
            "lissajous6",
            "9*x^2 - 24*x^4 + 16*x^6 + 9*y^2 - 24*y^4 + 16*y^6 - 1",
            0.05,
        )?,
        "ellipse_pinch" => {
            let v = take_int(&mut p, "ellipse_pinch", "variant", 0)?;
            let src = match v {
                0 => "x^2 + 16*y^2 - 1",
                1 => "(y - x)*(y + x)",
                2 => "(x^2 + y^2)^3 - 4*x^2*y^2",
                3 => "(x^2 + y^2 - 1)^3 - x^2*y^3",
                _ => {
                    return Err(CatalogError::InvalidParam {
                        system: "ellipse_pinch",
                        reason: format!("`variant` must be 0..=3, got {v}"),
                    })
                }
            };
            let mut e = plane_curve("ellipse_pinch", src, 0.1)?;
            e.params = vec![("variant", v as f64)];
            e
        }
        "whitney" => {
            let ctx = ctx3();
            CatalogEntry {
                name: "whitney",
                params: Vec::new(),
                system: PolySystem::equalities_only(
                    &ctx,
                    parse_all(&ctx, &["x^2 - y^2*z"])?,
                )?,
                recommended_box: Some(AxisBox::cube(-1.5, 1.5, 3).expect("valid box")),
                recommended_sigma: Some(0.1),
            }
        }
        "torus" => {
            let r_major = p.remove("R").unwrap_or(2.0);
            let r_minor = p.remove("r").unwrap_or(1.0);
            if !(r_major.is_finite() && r_minor.is_finite() && r_major > r_minor && r_minor > 0.0)
            {
                return Err(CatalogError::InvalidParam {
                    system: "torus",
                    reason: format!("requires R > r > 0, got R = {r_major}, r = {r_minor}"),
                });
            }
            let ctx = ctx3();
            // (x^2 + y^2 + z^2 + R^2 - r^2)^2 - 4 R^2 (x^2 + y^2)
            let radii2 = Polynomial::parse("x^2 + y^2", &ctx)?;
            let shifted = Polynomial::parse("x^2 + y^2 + z^2", &ctx)?
                .add(&Polynomial::constant(&ctx, r_major * r_major - r_minor * r_minor))?;
            let g = shifted.powi(2).sub(&radii2.scale(4.0 * r_major * r_major))?;
            let extent = r_major + r_minor + 0.5;
            CatalogEntry {
                name: "torus",
                params: vec![("R", r_major), ("r", r_minor)],
                system: PolySystem::equalities_only(&ctx, vec![g])?,
                recommended_box: Some(AxisBox::cube(-extent, extent, 3).expect("valid box")),
                recommended_sigma: Some(0.1),
            }
        }
        "sphere_plane" => {
            let ctx = ctx3();
            CatalogEntry {
                name: "sphere_plane",
                params: Vec::new(),
                system: PolySystem::equalities_only(
                    &ctx,
                    parse_all(&ctx, &["x^2 + y^2 + z^2 - 1", "z - x - y"])?,
                )?,
                recommended_box: Some(AxisBox::cube(-1.5, 1.5, 3).expect("valid box")),
                recommended_sigma: Some(0.1),
            }
        }
        "circle_plane" => {
            let ctx = ctx3();
            CatalogEntry {
                name: "circle_plane",
                params: Vec::new(),
                system: PolySystem::equalities_only(
                    &ctx,
                    parse_all(&ctx, &["x^2 + y^2 - 1", "z"])?,
                )?,
                recommended_box: Some(AxisBox::cube(-1.5, 1.5, 3).expect("valid box")),
                recommended_sigma: Some(0.1),
            }
        }
        "zero_dim" => {
            let v = take_int(&mut p, "zero_dim", "variant", 0)?;
            let src: &[&str] = match v {
                0 => &["x", "y"],
                1 => &["y - x", "y + x"],
                2 => &["y - x^2", "y + x^2"],
                3 => &["x*y^3 - x^3*y", "x^2 + y^2 - 1"],
                _ => {
                    return Err(CatalogError::InvalidParam {
                        system: "zero_dim",
                        reason: format!("`variant` must be 0..=3, got {v}"),
                    })
                }
            };
            let ctx = ctx2();
            CatalogEntry {
                name: "zero_dim",
                params: vec![("variant", v as f64)],
                system: PolySystem::equalities_only(&ctx, parse_all(&ctx, src)?)?,
                recommended_box: Some(AxisBox::cube(-1.5, 1.5, 2).expect("valid box")),
                recommended_sigma: Some(0.1),
            }
        }
        "independence2x2" => {
            let ctx = VarContext::new(["p00", "p01", "p10", "p11"]).expect("valid names");
            CatalogEntry {
                name: "independence2x2",
                params: Vec::new(),
                system: PolySystem::equalities_only(
                    &ctx,
                    parse_all(
                        &ctx,
                        &["p00*p11 - p01*p10", "p00 + p01 + p10 + p11 - 1"],
                    )?,
                )?,
                recommended_box: Some(AxisBox::cube(0.0, 1.0, 4).expect("valid box")),
                recommended_sigma: Some(0.025),
            }
        }
        "disc" => {
            let ctx = ctx2();
            CatalogEntry {
                name: "disc",
                params: Vec::new(),
                system: PolySystem::new(
                    &ctx,
                    Vec::new(),
                    parse_all(&ctx, &["1 - x^2 - y^2"])?,
                )?,
                recommended_box: Some(AxisBox::cube(-1.5, 1.5, 2).expect("valid box")),
                recommended_sigma: Some(0.05),
            }
        }
        "kuramoto" => {
            let n = take_int(&mut p, "kuramoto", "N", 5)?;
            if !(2..=64).contains(&n) {
                return Err(CatalogError::InvalidParam {
                    system: "kuramoto",
                    reason: format!("`N` must be in 2..=64, got {n}"),
                });
            }
            let system = kuramoto_system(n as u32)?;
            let dim = system.n_vars();
            CatalogEntry {
                name: "kuramoto",
                params: vec![("N", n as f64)],
                system,
                recommended_box: Some(AxisBox::cube(-1.5, 1.5, dim).expect("valid box")),
                recommended_sigma: Some(0.05),
            }
        }
        other => return Err(CatalogError::UnknownSystem(other.into())),
    };
    if let Some(key) = p.keys().next() {
        return Err(CatalogError::InvalidParam {
            system: entry.name,
            reason: format!("unknown parameter `{key}`"),
        });
    }
    Ok(entry)
}

/// Build with all defaults.
pub fn build_default(name: &str) -> Result<CatalogEntry, CatalogError> {
    build(name, &BTreeMap::new())
}

/// Every entry at default parameters, with all variants of the indexed
/// families expanded. Convenient for sweep-style tests.
pub fn all_entries() -> Vec<CatalogEntry> {
    let mut out = Vec::new();
    for name in names() {
        match *name {
            "ellipse_pinch" | "zero_dim" => {
                for v in 0..4 {
                    let mut p = BTreeMap::new();
                    p.insert("variant".to_string(), f64::from(v));
                    out.push(build(name, &p).expect("catalog builds"));
                }
            }
            _ => out.push(build_default(name).expect("catalog builds")),
        }
    }
    out
}

fn plane_curve(
    name: &'static str,
    source: &str,
    sigma: f64,
) -> Result<CatalogEntry, CatalogError> {
    let ctx = ctx2();
    Ok(CatalogEntry {
        name,
        params: Vec::new(),
        system: PolySystem::equalities_only(&ctx, parse_all(&ctx, &[source])?)?,
        recommended_box: Some(AxisBox::cube(-1.5, 1.5, 2).expect("valid box")),
        recommended_sigma: Some(sigma),
    })
}

/// Steady states of N identical, fully coupled phase oscillators, with the
/// last oscillator pinned at angle zero (c_N = 1, s_N = 0). Variables are
/// (c_1..c_{N-1}, s_1..s_{N-1}); the first N-1 equations balance the
/// coupling at each free oscillator and the rest put (c_i, s_i) on the unit
/// circle. The pinned oscillator contributes the lone N*s_i term.
pub fn kuramoto_system(n_oscillators: u32) -> Result<PolySystem, CatalogError> {
    if n_oscillators < 2 {
        return Err(CatalogError::InvalidParam {
            system: "kuramoto",
            reason: format!("`N` must be at least 2, got {n_oscillators}"),
        });
    }
    let k = (n_oscillators - 1) as usize;
    let mut names = Vec::with_capacity(2 * k);
    for i in 1..=k {
        names.push(format!("c{i}"));
    }
    for i in 1..=k {
        names.push(format!("s{i}"));
    }
    let ctx = VarContext::new(names)?;
    let cos = |i: usize| Polynomial::variable(&ctx, i - 1);
    let sin = |i: usize| Polynomial::variable(&ctx, k + i - 1);
    let gain = f64::from(n_oscillators);

    let mut eqs = Vec::with_capacity(2 * k);
    for i in 1..=k {
        let mut eq = sin(i).scale(gain);
        for j in 1..=k {
            if j == i {
                continue;
            }
            let pair = cos(j).mul(&sin(i))?.sub(&cos(i).mul(&sin(j))?)?;
            eq = eq.add(&pair.scale(gain))?;
        }
        eqs.push(eq);
    }
    for i in 1..=k {
        let circle = cos(i)
            .mul(&cos(i))?
            .add(&sin(i).mul(&sin(i))?)?
            .sub(&Polynomial::constant(&ctx, 1.0))?;
        eqs.push(circle);
    }
    Ok(PolySystem::equalities_only(&ctx, eqs)?)
}

/// Multinomial log-likelihood sum(counts_i * ln p_i). A zero or negative
/// probability with a positive count yields -inf rather than an error, so
/// samplers can treat it as a zero-likelihood region.
pub fn log_likelihood_multinomial(p: &[f64], counts: &[u64]) -> f64 {
    assert_eq!(p.len(), counts.len(), "probability and count vectors must match");
    let mut total = 0.0;
    for (&pi, &ci) in p.iter().zip(counts) {
        if ci == 0 {
            continue;
        }
        if !(pi > 0.0) {
            return f64::NEG_INFINITY;
        }
        total += ci as f64 * pi.ln();
    }
    total
}
