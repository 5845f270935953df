//! Sparse multivariate polynomials over named real variables.
//!
//! A [`Polynomial`] is a map from exponent vectors to nonzero coefficients,
//! kept in graded-lexicographic order so printing and equality are
//! deterministic. All arithmetic expands eagerly; nothing retains a factored
//! form, because every consumer (evaluation, differentiation, Jacobians)
//! needs the flat term map.

mod parse;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("invalid variable name `{name}`")]
    InvalidVariable { name: String },
    #[error("duplicate variable name `{name}`")]
    DuplicateVariable { name: String },
    #[error("variable list is empty")]
    NoVariables,
    #[error("polynomials use different variable contexts")]
    ContextMismatch,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("variable index {index} out of range ({n_vars} variables)")]
    IndexOutOfRange { index: usize, n_vars: usize },
    #[error("coefficients must be finite")]
    NonFiniteCoefficient,
    #[error("system contains no polynomials")]
    EmptySystem,
    #[error("parse error at column {}: {message}", position + 1)]
    Parse { position: usize, message: String },
    #[error("unknown variable `{name}` at column {}", position + 1)]
    UnknownVariable { name: String, position: usize },
}

fn valid_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Ordered set of variable names; fixes the coordinate index of each name.
///
/// Cloning is cheap (shared storage). Two contexts are equal when their name
/// lists are equal, so independently built contexts over the same names are
/// interchangeable.
#[derive(Clone, PartialEq, Eq)]
pub struct VarContext {
    names: Arc<Vec<String>>,
}

impl VarContext {
    pub fn new<I, S>(names: I) -> Result<Self, PolyError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(PolyError::NoVariables);
        }
        for (i, name) in names.iter().enumerate() {
            if !valid_identifier(name) {
                return Err(PolyError::InvalidVariable { name: name.clone() });
            }
            if names[..i].contains(name) {
                return Err(PolyError::DuplicateVariable { name: name.clone() });
            }
        }
        Ok(VarContext { names: Arc::new(names) })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl fmt::Debug for VarContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VarContext({})", self.names.join(", "))
    }
}

/// Exponent vector ordered graded-lexicographically: higher total degree
/// compares greater, ties break on the exponent vector itself.
#[derive(Clone, PartialEq, Eq, Debug)]
struct Monomial(Box<[u32]>);

impl Monomial {
    fn total_degree(&self) -> u32 {
        self.0.iter().sum()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.total_degree()
            .cmp(&other.total_degree())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Sparse multivariate polynomial in canonical form: no zero coefficients,
/// terms ordered graded-lexicographically.
#[derive(Clone, PartialEq, Debug)]
pub struct Polynomial {
    ctx: VarContext,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(ctx: &VarContext) -> Self {
        Polynomial { ctx: ctx.clone(), terms: BTreeMap::new() }
    }

    pub fn constant(ctx: &VarContext, c: f64) -> Self {
        let mut p = Self::zero(ctx);
        if c != 0.0 {
            p.terms.insert(Monomial(vec![0; ctx.len()].into()), c);
        }
        p
    }

    /// The monomial `x_index`. Panics if the index is out of range.
    pub fn variable(ctx: &VarContext, index: usize) -> Self {
        assert!(index < ctx.len(), "variable index {index} out of range");
        let mut exps = vec![0u32; ctx.len()];
        exps[index] = 1;
        let mut p = Self::zero(ctx);
        p.terms.insert(Monomial(exps.into()), 1.0);
        p
    }

    pub fn from_terms(ctx: &VarContext, terms: &[(&[u32], f64)]) -> Result<Self, PolyError> {
        let mut p = Self::zero(ctx);
        for &(exps, c) in terms {
            if exps.len() != ctx.len() {
                return Err(PolyError::DimensionMismatch { expected: ctx.len(), got: exps.len() });
            }
            if !c.is_finite() {
                return Err(PolyError::NonFiniteCoefficient);
            }
            p.add_term(Monomial(exps.to_vec().into()), c);
        }
        Ok(p)
    }

    /// See [`parse::parse_polynomial`].
    pub fn parse(src: &str, ctx: &VarContext) -> Result<Self, PolyError> {
        parse::parse_polynomial(src, ctx)
    }

    pub fn context(&self) -> &VarContext {
        &self.ctx
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Total degree; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<u32> {
        self.terms.keys().next_back().map(Monomial::total_degree)
    }

    /// Terms in ascending graded-lex order as (exponents, coefficient).
    pub fn terms(&self) -> impl Iterator<Item = (&[u32], f64)> {
        self.terms.iter().map(|(m, &c)| (&*m.0, c))
    }

    pub fn coefficient(&self, exps: &[u32]) -> f64 {
        if exps.len() != self.ctx.len() {
            return 0.0;
        }
        self.terms.get(&Monomial(exps.to_vec().into())).copied().unwrap_or(0.0)
    }

    fn add_term(&mut self, mono: Monomial, c: f64) {
        use std::collections::btree_map::Entry;
        match self.terms.entry(mono) {
            Entry::Vacant(e) => {
                if c != 0.0 {
                    e.insert(c);
                }
            }
            Entry::Occupied(mut e) => {
                let sum = *e.get() + c;
                if sum == 0.0 {
                    e.remove();
                } else {
                    *e.get_mut() = sum;
                }
            }
        }
    }

    fn check_ctx(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.ctx == other.ctx {
            Ok(())
        } else {
            Err(PolyError::ContextMismatch)
        }
    }

    pub fn add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_ctx(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), c);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Polynomial {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c = -*c;
        }
        out
    }

    pub fn scale(&self, c: f64) -> Polynomial {
        if c == 0.0 {
            return Self::zero(&self.ctx);
        }
        let mut out = self.clone();
        out.terms = std::mem::take(&mut out.terms)
            .into_iter()
            .filter_map(|(m, v)| {
                let cv = v * c;
                (cv != 0.0).then_some((m, cv))
            })
            .collect();
        out
    }

    pub fn mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_ctx(other)?;
        let mut out = Self::zero(&self.ctx);
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                let exps: Vec<u32> =
                    ma.0.iter().zip(mb.0.iter()).map(|(a, b)| a + b).collect();
                out.add_term(Monomial(exps.into()), ca * cb);
            }
        }
        Ok(out)
    }

    pub fn powi(&self, k: u32) -> Polynomial {
        let mut out = Self::constant(&self.ctx, 1.0);
        for _ in 0..k {
            out = out.mul(self).expect("same context");
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, PolyError> {
        if x.len() != self.ctx.len() {
            return Err(PolyError::DimensionMismatch { expected: self.ctx.len(), got: x.len() });
        }
        Ok(self.eval_unchecked(x))
    }

    /// Term-sum evaluation without the dimension check; callers validate once
    /// per batch, not once per call.
    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (m, &c) in &self.terms {
            let mut term = c;
            for (i, &e) in m.0.iter().enumerate() {
                if e > 0 {
                    term *= x[i].powi(e as i32);
                }
            }
            acc += term;
        }
        acc
    }

    pub fn differentiate(&self, var_index: usize) -> Result<Polynomial, PolyError> {
        let n = self.ctx.len();
        if var_index >= n {
            return Err(PolyError::IndexOutOfRange { index: var_index, n_vars: n });
        }
        let mut out = Self::zero(&self.ctx);
        for (m, &c) in &self.terms {
            let e = m.0[var_index];
            if e == 0 {
                continue;
            }
            let mut exps = m.0.to_vec();
            exps[var_index] = e - 1;
            out.add_term(Monomial(exps.into()), c * f64::from(e));
        }
        Ok(out)
    }

    pub fn gradient(&self) -> Vec<Polynomial> {
        (0..self.ctx.len())
            .map(|i| self.differentiate(i).expect("index in range"))
            .collect()
    }

    /// Reinterpret the polynomial in another context; `map[i]` gives the
    /// target index of source variable `i`. Exponents move unchanged, so this
    /// is exact (no arithmetic).
    pub(crate) fn embed(&self, target: &VarContext, map: &[usize]) -> Polynomial {
        debug_assert_eq!(map.len(), self.ctx.len());
        let mut out = Polynomial::zero(target);
        for (m, &c) in &self.terms {
            let mut exps = vec![0u32; target.len()];
            for (i, &e) in m.0.iter().enumerate() {
                exps[map[i]] = e;
            }
            out.add_term(Monomial(exps.into()), c);
        }
        out
    }

    /// Substitute `var := replacement` (a polynomial in the target context).
    /// `map` sends every other source variable to a target-context variable
    /// index. Used for slack lifting and square substitution.
    pub(crate) fn substitute(
        &self,
        var_index: usize,
        replacement: &Polynomial,
        target: &VarContext,
        map: &[usize],
    ) -> Polynomial {
        let mut out = Polynomial::zero(target);
        for (m, &c) in &self.terms {
            let mut term = Polynomial::constant(target, c);
            for (i, &e) in m.0.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let factor = if i == var_index {
                    replacement.powi(e)
                } else {
                    Polynomial::variable(target, map[i]).powi(e)
                };
                term = term.mul(&factor).expect("same context");
            }
            out = out.add(&term).expect("same context");
        }
        out
    }
}

impl fmt::Display for Polynomial {
    /// Canonical form, descending graded-lex, re-parsable by [`Polynomial::parse`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (idx, (m, &c)) in self.terms.iter().rev().enumerate() {
            let mag = c.abs();
            if idx == 0 {
                if c < 0.0 {
                    write!(f, "-")?;
                }
            } else if c < 0.0 {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let is_const = m.0.iter().all(|&e| e == 0);
            let mut need_star = false;
            if mag != 1.0 || is_const {
                write!(f, "{mag}")?;
                need_star = true;
            }
            for (i, &e) in m.0.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                if need_star {
                    write!(f, "*")?;
                }
                need_star = true;
                write!(f, "{}", self.ctx.name(i))?;
                if e > 1 {
                    write!(f, "^{e}")?;
                }
            }
        }
        Ok(())
    }
}

/// Ordered polynomial system g = (g_1..g_m) with optional strict
/// inequalities h_i > 0, all over one shared context.
#[derive(Clone, PartialEq, Debug)]
pub struct PolySystem {
    ctx: VarContext,
    equalities: Vec<Polynomial>,
    inequalities: Vec<Polynomial>,
}

impl PolySystem {
    pub fn new(
        ctx: &VarContext,
        equalities: Vec<Polynomial>,
        inequalities: Vec<Polynomial>,
    ) -> Result<Self, PolyError> {
        if equalities.is_empty() && inequalities.is_empty() {
            return Err(PolyError::EmptySystem);
        }
        for p in equalities.iter().chain(&inequalities) {
            if p.context() != ctx {
                return Err(PolyError::ContextMismatch);
            }
        }
        Ok(PolySystem { ctx: ctx.clone(), equalities, inequalities })
    }

    pub fn equalities_only(ctx: &VarContext, equalities: Vec<Polynomial>) -> Result<Self, PolyError> {
        Self::new(ctx, equalities, Vec::new())
    }

    pub fn context(&self) -> &VarContext {
        &self.ctx
    }

    pub fn n_vars(&self) -> usize {
        self.ctx.len()
    }

    pub fn equalities(&self) -> &[Polynomial] {
        &self.equalities
    }

    pub fn inequalities(&self) -> &[Polynomial] {
        &self.inequalities
    }

    pub fn n_equalities(&self) -> usize {
        self.equalities.len()
    }

    pub fn n_inequalities(&self) -> usize {
        self.inequalities.len()
    }

    /// m x n matrix J with J[i][j] = dg_i/dx_j.
    pub fn jacobian(&self) -> Vec<Vec<Polynomial>> {
        self.equalities.iter().map(|g| g.gradient()).collect()
    }

    /// n matrices H_k (each m x n) with (H_k)[i][j] = d^2 g_i / dx_j dx_k,
    /// i.e. H_k is the derivative of the Jacobian in direction x_k. Satisfies
    /// (H_k)[i][j] = (H_j)[i][k] symbolically.
    pub fn hessian_stack(&self) -> Vec<Vec<Vec<Polynomial>>> {
        let jac = self.jacobian();
        (0..self.n_vars())
            .map(|k| {
                jac.iter()
                    .map(|row| {
                        row.iter()
                            .map(|p| p.differentiate(k).expect("index in range"))
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// h = sum g_i^2, a single polynomial with V(h) = V(g) over the reals.
    /// Inequalities do not contribute.
    pub fn sum_of_squares(&self) -> Polynomial {
        let mut h = Polynomial::zero(&self.ctx);
        for g in &self.equalities {
            h = h.add(&g.mul(g).expect("same context")).expect("same context");
        }
        h
    }

    /// Evaluate all equalities at x.
    pub fn eval_equalities(&self, x: &[f64]) -> Result<Vec<f64>, PolyError> {
        if x.len() != self.ctx.len() {
            return Err(PolyError::DimensionMismatch { expected: self.ctx.len(), got: x.len() });
        }
        Ok(self.equalities.iter().map(|g| g.eval_unchecked(x)).collect())
    }
}
