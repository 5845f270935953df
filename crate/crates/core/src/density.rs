//! Log-pseudodensities concentrated on a variety V(g).
//!
//! Four kinds, sharing one evaluation pipeline:
//!
//! * HVN: exp(-g^2 / 2s2), raw residual, fuzz varies with the gradient scale.
//! * VN:  exp(-gbar^2 / 2s2) with gbar = g/|grad g|, first-order distance.
//! * MVN: exp(-gbar' S^-1 gbar / 2) with gbar = J+ g, the m >= 1 general case.
//! * Induced: an arbitrary univariate base density evaluated at gbar.
//!
//! All densities are unnormalized; Gaussian kinds are bounded by 1 with the
//! maximum attained exactly on the variety. A truncation box, when set, sends
//! the log-density to -inf outside.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::batch::AxisBox;
use crate::poly::{PolyError, PolySystem, Polynomial};

/// Relative eigenvalue threshold declaring a Gram matrix singular.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("Jacobian is numerically rank-deficient at {x:?} (smallest singular value {smallest_singular_value:.3e})")]
    RankDeficient { x: Vec<f64>, smallest_singular_value: f64 },
    #[error("{kind} requires a single equality (m = 1), got m = {m}")]
    RequiresSingleEquality { kind: &'static str, m: usize },
    #[error("density model requires at least one equality")]
    NoEqualities,
    #[error("system has inequalities; lift them to equalities first")]
    HasInequalities,
    #[error("dispersion must be positive and finite")]
    InvalidDispersion,
    #[error("covariance must be a finite symmetric positive definite {n}x{n} matrix")]
    InvalidCovariance { n: usize },
    #[error("invalid base distribution: {reason}")]
    InvalidBase { reason: String },
    #[error("gradient unavailable: {reason}")]
    NonSmooth { reason: String },
    #[error("operation not supported: {reason}")]
    Unsupported { reason: String },
    #[error("point lies outside the truncation box")]
    OutsideTruncation,
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// Univariate base distribution for induced variety distributions, evaluated
/// at the normalized residual gbar. Log-densities are unnormalized.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseDistribution {
    Uniform { lo: f64, hi: f64 },
    /// Beta(alpha, beta) stretched to the interval (shift, shift + scale).
    Beta { alpha: f64, beta: f64, shift: f64, scale: f64 },
    /// Rate-lambda exponential on [0, inf): mass piles against gbar = 0 from
    /// the positive side.
    Exponential { rate: f64 },
}

impl BaseDistribution {
    fn validate(&self) -> Result<(), DensityError> {
        let bad = |reason: &str| Err(DensityError::InvalidBase { reason: reason.into() });
        match *self {
            BaseDistribution::Uniform { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                    return bad("uniform requires finite lo < hi");
                }
            }
            BaseDistribution::Beta { alpha, beta, shift, scale } => {
                if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
                    return bad("beta requires alpha, beta > 0");
                }
                if !shift.is_finite() || !(scale > 0.0 && scale.is_finite()) {
                    return bad("beta requires finite shift and positive scale");
                }
            }
            BaseDistribution::Exponential { rate } => {
                if !(rate > 0.0 && rate.is_finite()) {
                    return bad("exponential requires rate > 0");
                }
            }
        }
        Ok(())
    }

    /// Unnormalized log-density; -inf outside the support.
    pub fn log_density(&self, u: f64) -> f64 {
        match *self {
            BaseDistribution::Uniform { lo, hi } => {
                if u >= lo && u <= hi {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            BaseDistribution::Beta { alpha, beta, shift, scale } => {
                let t = (u - shift) / scale;
                if t <= 0.0 || t >= 1.0 {
                    f64::NEG_INFINITY
                } else {
                    (alpha - 1.0) * t.ln() + (beta - 1.0) * (1.0 - t).ln()
                }
            }
            BaseDistribution::Exponential { rate } => {
                if u >= 0.0 {
                    -rate * u
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// d/du of [`Self::log_density`] on the open support; `None` when the
    /// base is not smooth enough for gradient-based sampling.
    fn dlog_density(&self, u: f64) -> Option<f64> {
        if !self.is_smooth() {
            return None;
        }
        match *self {
            BaseDistribution::Uniform { .. } => None,
            BaseDistribution::Beta { alpha, beta, shift, scale } => {
                let t = (u - shift) / scale;
                if t <= 0.0 || t >= 1.0 {
                    // Zero-mass region: flat, so the integrator stays finite
                    // and Metropolis rejects there via the -inf endpoint.
                    Some(0.0)
                } else {
                    Some(((alpha - 1.0) / t - (beta - 1.0) / (1.0 - t)) / scale)
                }
            }
            BaseDistribution::Exponential { rate } => Some(if u >= 0.0 { -rate } else { 0.0 }),
        }
    }

    /// Whether the log-density is smooth on the open support (gradient-based
    /// samplers require this).
    pub fn is_smooth(&self) -> bool {
        match *self {
            BaseDistribution::Uniform { .. } => false,
            BaseDistribution::Beta { alpha, beta, .. } => alpha > 1.0 && beta > 1.0,
            BaseDistribution::Exponential { .. } => true,
        }
    }

    /// Whether the unnormalized density is bounded by 1, the envelope the
    /// rejection sampler assumes.
    pub fn bounded_by_one(&self) -> bool {
        match *self {
            BaseDistribution::Uniform { .. } => true,
            BaseDistribution::Beta { alpha, beta, .. } => alpha >= 1.0 && beta >= 1.0,
            BaseDistribution::Exponential { .. } => true,
        }
    }
}

#[derive(Debug, Clone)]
pub enum DensityKind {
    Hvn { sigma2: f64 },
    Vn { sigma2: f64 },
    /// Isotropic covariance sigma2 * I over the normalized residual.
    MvnIsotropic { sigma2: f64 },
    /// Dense symmetric positive definite covariance (n x n).
    MvnDense { covariance: DMatrix<f64> },
    Induced { base: BaseDistribution },
}

impl DensityKind {
    fn name(&self) -> &'static str {
        match self {
            DensityKind::Hvn { .. } => "HVN",
            DensityKind::Vn { .. } => "VN",
            DensityKind::MvnIsotropic { .. } | DensityKind::MvnDense { .. } => "MVN",
            DensityKind::Induced { .. } => "induced",
        }
    }
}

/// A variety density: system, kind, optional truncation box, with the
/// Jacobian and Hessian stack precomputed symbolically at construction.
/// Immutable after construction; all evaluations are pure.
#[derive(Clone)]
pub struct DensityModel {
    system: PolySystem,
    kind: DensityKind,
    truncation: Option<AxisBox>,
    jac: Vec<Vec<Polynomial>>,
    hess: Vec<Vec<Vec<Polynomial>>>,
    /// Cholesky of the dense covariance, when the kind carries one.
    cov_chol: Option<Cholesky<f64, Dyn>>,
}

impl std::fmt::Debug for DensityModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DensityModel")
            .field("kind", &self.kind)
            .field("m", &self.system.n_equalities())
            .field("n", &self.system.n_vars())
            .field("truncation", &self.truncation)
            .finish()
    }
}

fn check_sigma2(sigma2: f64) -> Result<(), DensityError> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(())
    } else {
        Err(DensityError::InvalidDispersion)
    }
}

impl DensityModel {
    pub fn new(system: PolySystem, kind: DensityKind) -> Result<Self, DensityError> {
        if system.n_equalities() == 0 {
            return Err(DensityError::NoEqualities);
        }
        if system.n_inequalities() > 0 {
            return Err(DensityError::HasInequalities);
        }
        let m = system.n_equalities();
        let n = system.n_vars();
        let mut cov_chol = None;
        match &kind {
            DensityKind::Hvn { sigma2 } | DensityKind::Vn { sigma2 } => {
                check_sigma2(*sigma2)?;
                if m != 1 {
                    return Err(DensityError::RequiresSingleEquality { kind: kind.name(), m });
                }
            }
            DensityKind::MvnIsotropic { sigma2 } => check_sigma2(*sigma2)?,
            DensityKind::MvnDense { covariance } => {
                let ok = covariance.nrows() == n
                    && covariance.ncols() == n
                    && covariance.iter().all(|v| v.is_finite())
                    && {
                        let asym = (covariance - covariance.transpose()).amax();
                        asym <= 1e-12 * covariance.amax().max(1.0)
                    };
                if !ok {
                    return Err(DensityError::InvalidCovariance { n });
                }
                match Cholesky::new(covariance.clone()) {
                    Some(c) => cov_chol = Some(c),
                    None => return Err(DensityError::InvalidCovariance { n }),
                }
            }
            DensityKind::Induced { base } => {
                base.validate()?;
                if m != 1 {
                    return Err(DensityError::RequiresSingleEquality { kind: kind.name(), m });
                }
            }
        }
        let jac = system.jacobian();
        let hess = system.hessian_stack();
        Ok(DensityModel { system, kind, truncation: None, jac, hess, cov_chol })
    }

    pub fn hvn(system: PolySystem, sigma2: f64) -> Result<Self, DensityError> {
        Self::new(system, DensityKind::Hvn { sigma2 })
    }

    pub fn vn(system: PolySystem, sigma2: f64) -> Result<Self, DensityError> {
        Self::new(system, DensityKind::Vn { sigma2 })
    }

    pub fn mvn_isotropic(system: PolySystem, sigma2: f64) -> Result<Self, DensityError> {
        Self::new(system, DensityKind::MvnIsotropic { sigma2 })
    }

    pub fn mvn(system: PolySystem, covariance: DMatrix<f64>) -> Result<Self, DensityError> {
        Self::new(system, DensityKind::MvnDense { covariance })
    }

    pub fn induced(system: PolySystem, base: BaseDistribution) -> Result<Self, DensityError> {
        Self::new(system, DensityKind::Induced { base })
    }

    /// Restrict the density to a box; mass outside is zero.
    pub fn with_truncation(mut self, bounds: AxisBox) -> Result<Self, DensityError> {
        if bounds.dim() != self.system.n_vars() {
            return Err(DensityError::DimensionMismatch {
                expected: self.system.n_vars(),
                got: bounds.dim(),
            });
        }
        self.truncation = Some(bounds);
        Ok(self)
    }

    pub fn system(&self) -> &PolySystem {
        &self.system
    }

    pub fn kind(&self) -> &DensityKind {
        &self.kind
    }

    pub fn truncation(&self) -> Option<&AxisBox> {
        self.truncation.as_ref()
    }

    pub fn n_vars(&self) -> usize {
        self.system.n_vars()
    }

    pub fn n_equalities(&self) -> usize {
        self.system.n_equalities()
    }

    /// Whether [`Self::grad_log_density`] is available for this kind.
    pub fn supports_gradient(&self) -> bool {
        match &self.kind {
            DensityKind::Induced { base } => base.is_smooth(),
            _ => true,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), DensityError> {
        if x.len() != self.system.n_vars() {
            return Err(DensityError::DimensionMismatch {
                expected: self.system.n_vars(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// g(x), the raw residual vector.
    pub fn residual_raw(&self, x: &[f64]) -> Result<DVector<f64>, DensityError> {
        self.check_dim(x)?;
        Ok(DVector::from_iterator(
            self.system.n_equalities(),
            self.system.equalities().iter().map(|g| g.eval_unchecked(x)),
        ))
    }

    /// Euclidean norm of the raw residual.
    pub fn residual_norm(&self, x: &[f64]) -> Result<f64, DensityError> {
        Ok(self.residual_raw(x)?.norm())
    }

    /// Normalized residual: gbar = g/|grad g| for VN and induced kinds, the
    /// pseudoinverse residual J+ g (length n) for MVN. HVN performs no
    /// normalization, so the raw residual is returned.
    pub fn residual_normalized(&self, x: &[f64]) -> Result<DVector<f64>, DensityError> {
        self.check_dim(x)?;
        match &self.kind {
            DensityKind::Hvn { .. } => self.residual_raw(x),
            DensityKind::Vn { .. } | DensityKind::Induced { .. } => {
                let (gbar, _) = self.scalar_normalized(x, false)?;
                Ok(DVector::from_element(1, gbar))
            }
            DensityKind::MvnIsotropic { .. } | DensityKind::MvnDense { .. } => {
                let gram = self.gram_at(x, false)?;
                Ok(gram.gbar)
            }
        }
    }

    /// Scalar residual the rejection sampler's band mode thresholds on:
    /// gbar for VN/induced kinds and the raw g for HVN. MVN has no scalar
    /// band residual.
    pub fn band_residual(&self, x: &[f64]) -> Result<f64, DensityError> {
        self.check_dim(x)?;
        match &self.kind {
            DensityKind::Hvn { .. } => Ok(self.residual_raw(x)?[0]),
            DensityKind::Vn { .. } | DensityKind::Induced { .. } => {
                Ok(self.scalar_normalized(x, false)?.0)
            }
            _ => Err(DensityError::Unsupported {
                reason: "band residual is defined for single-equality kinds only".into(),
            }),
        }
    }

    /// Unnormalized log-density; -inf outside the truncation box.
    pub fn log_density(&self, x: &[f64]) -> Result<f64, DensityError> {
        Ok(self.evaluate(x, false, false)?.log_density)
    }

    /// Analytic gradient of the log-density. Errors outside the truncation
    /// box (the density is -inf there) and for non-smooth induced bases.
    pub fn grad_log_density(&self, x: &[f64]) -> Result<DVector<f64>, DensityError> {
        self.check_dim(x)?;
        if let Some(b) = &self.truncation {
            if !b.contains(x) {
                return Err(DensityError::OutsideTruncation);
            }
        }
        let out = self.evaluate(x, true, false)?;
        Ok(out.grad.expect("gradient requested"))
    }

    /// HMC-facing evaluation: log-density with truncation applied, gradient
    /// of the untruncated density, Gram solves clamped instead of failing.
    /// The flag reports whether clamping actually engaged.
    pub(crate) fn eval_clamped(
        &self,
        x: &[f64],
        want_grad: bool,
    ) -> Result<EvalOutput, DensityError> {
        self.evaluate(x, want_grad, true)
    }

    fn scalar_normalized(&self, x: &[f64], clamp: bool) -> Result<(f64, bool), DensityError> {
        let g = self.system.equalities()[0].eval_unchecked(x);
        let mut s2 = 0.0;
        for p in &self.jac[0] {
            let d = p.eval_unchecked(x);
            s2 += d * d;
        }
        // The relative eigenvalue test is vacuous for a 1x1 Gram matrix; the
        // failure mode here is an exact (or denormal) zero gradient, which
        // only happens at singular points of g.
        let mut clamped = false;
        if s2 < f64::MIN_POSITIVE {
            if clamp {
                s2 = f64::MIN_POSITIVE;
                clamped = true;
            } else {
                return Err(DensityError::RankDeficient {
                    x: x.to_vec(),
                    smallest_singular_value: s2.sqrt(),
                });
            }
        }
        Ok((g / s2.sqrt(), clamped))
    }

    fn jac_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let m = self.system.n_equalities();
        let n = self.system.n_vars();
        DMatrix::from_fn(m, n, |i, j| self.jac[i][j].eval_unchecked(x))
    }

    fn hess_matrix(&self, x: &[f64], k: usize) -> DMatrix<f64> {
        let m = self.system.n_equalities();
        let n = self.system.n_vars();
        DMatrix::from_fn(m, n, |i, j| self.hess[k][i][j].eval_unchecked(x))
    }

    /// Solve the Gram system for the MVN kinds, honoring the rank policy.
    fn gram_at(&self, x: &[f64], clamp: bool) -> Result<GramEval, DensityError> {
        let m = self.system.n_equalities();
        let n = self.system.n_vars();
        let jac = self.jac_matrix(x);
        let g = self.residual_raw(x)?;
        let underdetermined = n >= m;
        let gram = if underdetermined { &jac * jac.transpose() } else { jac.transpose() * &jac };
        let eigen = gram.clone().symmetric_eigen();
        let lam_max = eigen.eigenvalues.amax();
        let lam_min = eigen.eigenvalues.min();
        let singular = lam_min < RANK_TOL * lam_max || lam_max < f64::MIN_POSITIVE;
        if singular && !clamp {
            return Err(DensityError::RankDeficient {
                x: x.to_vec(),
                smallest_singular_value: lam_min.max(0.0).sqrt(),
            });
        }
        let cache = GramSolveCache { gram, eigen, singular };
        let (w, gbar) = if underdetermined {
            let w = cache.solve(&g);
            let gbar = jac.transpose() * &w;
            (w, gbar)
        } else {
            let jt_g = jac.transpose() * &g;
            let gbar = cache.solve(&jt_g);
            (DVector::zeros(0), gbar)
        };
        Ok(GramEval { jac, g, gbar, w, solve_cache: cache, clamped: singular })
    }

    fn evaluate(&self, x: &[f64], want_grad: bool, clamp: bool) -> Result<EvalOutput, DensityError> {
        self.check_dim(x)?;
        let in_box = self.truncation.as_ref().map_or(true, |b| b.contains(x));
        let n = self.system.n_vars();

        let mut out = match &self.kind {
            DensityKind::Hvn { sigma2 } => {
                let g = self.system.equalities()[0].eval_unchecked(x);
                let logp = -(g * g) / (2.0 * sigma2);
                let grad = want_grad.then(|| {
                    let scale = -g / sigma2;
                    DVector::from_iterator(
                        n,
                        self.jac[0].iter().map(|p| scale * p.eval_unchecked(x)),
                    )
                });
                EvalOutput { log_density: logp, grad, clamped: false }
            }
            DensityKind::Vn { .. } | DensityKind::Induced { .. } => {
                let (gbar, clamped) = self.scalar_normalized(x, clamp)?;
                let logp = match &self.kind {
                    DensityKind::Vn { sigma2 } => -(gbar * gbar) / (2.0 * sigma2),
                    DensityKind::Induced { base } => base.log_density(gbar),
                    _ => unreachable!(),
                };
                let grad = if want_grad {
                    let dlogp_du = match &self.kind {
                        DensityKind::Vn { sigma2 } => -gbar / sigma2,
                        DensityKind::Induced { base } => {
                            base.dlog_density(gbar).ok_or_else(|| DensityError::NonSmooth {
                                reason: "base distribution has no smooth log-density".into(),
                            })?
                        }
                        _ => unreachable!(),
                    };
                    Some(self.scalar_normalized_grad(x, dlogp_du)?)
                } else {
                    None
                };
                EvalOutput { log_density: logp, grad, clamped }
            }
            DensityKind::MvnIsotropic { sigma2 } => {
                let ge = self.gram_at(x, clamp)?;
                let underdetermined = n >= self.system.n_equalities();
                // Eq.-4 shortcut when not overdetermined: g'(JJ')^-1 g = g.w
                let quad = if underdetermined { ge.g.dot(&ge.w) } else { ge.gbar.norm_squared() };
                let logp = -quad / (2.0 * sigma2);
                let s2 = *sigma2;
                let grad = want_grad
                    .then(|| self.mvn_grad(x, &ge, |gbar| gbar / s2))
                    .transpose()?;
                EvalOutput { log_density: logp, grad, clamped: ge.clamped }
            }
            DensityKind::MvnDense { .. } => {
                let ge = self.gram_at(x, clamp)?;
                let chol = self.cov_chol.as_ref().expect("dense kind stores factor");
                let y = chol.solve(&ge.gbar);
                let logp = -0.5 * ge.gbar.dot(&y);
                let grad = want_grad.then(|| self.mvn_grad(x, &ge, |gbar| chol.solve(gbar))).transpose()?;
                EvalOutput { log_density: logp, grad, clamped: ge.clamped }
            }
        };

        if !in_box {
            out.log_density = f64::NEG_INFINITY;
        }
        Ok(out)
    }

    /// d gbar / dx for the scalar (m = 1) normalization, contracted with the
    /// base kind's d logp / d gbar.
    fn scalar_normalized_grad(
        &self,
        x: &[f64],
        dlogp_du: f64,
    ) -> Result<DVector<f64>, DensityError> {
        let n = self.system.n_vars();
        let g = self.system.equalities()[0].eval_unchecked(x);
        let grad_g = DVector::from_iterator(n, self.jac[0].iter().map(|p| p.eval_unchecked(x)));
        let norm2 = grad_g.norm_squared().max(f64::MIN_POSITIVE);
        let norm = norm2.sqrt();
        // Symmetric Hessian of the single equality.
        let hess = DMatrix::from_fn(n, n, |j, k| self.hess[k][0][j].eval_unchecked(x));
        let hg = &hess * &grad_g;
        let dgbar = &grad_g / norm - hg * (g / (norm2 * norm));
        Ok(dgbar * dlogp_du)
    }

    /// Gradient of the MVN log-density. `apply_prec` maps gbar to
    /// Sigma^-1 gbar for the kind's covariance.
    fn mvn_grad(
        &self,
        x: &[f64],
        ge: &GramEval,
        apply_prec: impl Fn(&DVector<f64>) -> DVector<f64>,
    ) -> Result<DVector<f64>, DensityError> {
        let m = self.system.n_equalities();
        let n = self.system.n_vars();
        let underdetermined = n >= m;
        let y = apply_prec(&ge.gbar);
        let mut grad = DVector::zeros(n);
        if underdetermined {
            // dgbar/dx_k = H_k' w + J' G^-1 (J[:,k] - (H_k J' + J H_k') w),
            // contracted against y = Sigma^-1 gbar without forming dgbar:
            // y . (J' dw) = (J y) . dw.
            let j_y = &ge.jac * &y;
            for k in 0..n {
                let hk = self.hess_matrix(x, k);
                let hkt_w = hk.transpose() * &ge.w;
                let rhs = ge.jac.column(k) - &hk * (ge.jac.transpose() * &ge.w) - &ge.jac * &hkt_w;
                let dw = ge.solve_cache.solve(&rhs);
                grad[k] = -(y.dot(&hkt_w) + j_y.dot(&dw));
            }
        } else {
            // dgbar/dx_k = M^-1 (H_k' g + J' J[:,k] - (H_k' J + J' H_k) gbar)
            for k in 0..n {
                let hk = self.hess_matrix(x, k);
                let rhs = hk.transpose() * &ge.g + ge.jac.transpose() * ge.jac.column(k)
                    - hk.transpose() * (&ge.jac * &ge.gbar)
                    - ge.jac.transpose() * (&hk * &ge.gbar);
                let dgbar = ge.solve_cache.solve(&rhs);
                grad[k] = -y.dot(&dgbar);
            }
        }
        Ok(grad)
    }
}

pub(crate) struct EvalOutput {
    pub log_density: f64,
    pub grad: Option<DVector<f64>>,
    pub clamped: bool,
}

struct GramSolveCache {
    gram: DMatrix<f64>,
    eigen: nalgebra::SymmetricEigen<f64, Dyn>,
    singular: bool,
}

impl GramSolveCache {
    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        if self.singular {
            let lam_max = self.eigen.eigenvalues.amax();
            let floor = (RANK_TOL * lam_max).max(f64::MIN_POSITIVE);
            let coeffs = DVector::from_iterator(
                self.eigen.eigenvalues.len(),
                self.eigen
                    .eigenvalues
                    .iter()
                    .zip((self.eigen.eigenvectors.transpose() * rhs).iter())
                    .map(|(&lam, &c)| c / lam.max(floor)),
            );
            &self.eigen.eigenvectors * coeffs
        } else {
            eigen_safe_cholesky_solve(&self.gram, rhs, &self.eigen)
        }
    }
}

/// Cholesky solve with an eigendecomposition fallback for the rare case where
/// the factorization fails despite the rank test passing.
fn eigen_safe_cholesky_solve(
    gram: &DMatrix<f64>,
    rhs: &DVector<f64>,
    eigen: &nalgebra::SymmetricEigen<f64, Dyn>,
) -> DVector<f64> {
    if let Some(chol) = Cholesky::new(gram.clone()) {
        chol.solve(rhs)
    } else {
        let coeffs = DVector::from_iterator(
            eigen.eigenvalues.len(),
            eigen
                .eigenvalues
                .iter()
                .zip((eigen.eigenvectors.transpose() * rhs).iter())
                .map(|(&lam, &c)| c / lam.max(f64::MIN_POSITIVE)),
        );
        &eigen.eigenvectors * coeffs
    }
}

struct GramEval {
    jac: DMatrix<f64>,
    g: DVector<f64>,
    gbar: DVector<f64>,
    /// (JJ')^-1 g in the underdetermined case; empty otherwise.
    w: DVector<f64>,
    solve_cache: GramSolveCache,
    clamped: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::VarContext;

    fn circle_system() -> PolySystem {
        let ctx = VarContext::new(["x", "y"]).unwrap();
        let g = Polynomial::parse("x^2 + y^2 - 1", &ctx).unwrap();
        PolySystem::equalities_only(&ctx, vec![g]).unwrap()
    }

    fn fd_grad(model: &DensityModel, x: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        (0..x.len())
            .map(|k| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[k] += h;
                xm[k] -= h;
                (model.log_density(&xp).unwrap() - model.log_density(&xm).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn vn_circle_frozen_values() {
        let model = DensityModel::vn(circle_system(), 0.01).unwrap();
        // g = 1, |grad g| = 2 sqrt 2 at (1,1)
        let r = model.residual_normalized(&[1.0, 1.0]).unwrap();
        assert!((r[0] - 1.0 / (2.0 * 2.0_f64.sqrt())).abs() < 1e-12);
        assert!((model.log_density(&[1.0, 1.0]).unwrap() + 6.25).abs() < 1e-6);
        assert_eq!(model.log_density(&[1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn hvn_differs_from_vn_off_variety() {
        let vn = DensityModel::vn(circle_system(), 0.01).unwrap();
        let hvn = DensityModel::hvn(circle_system(), 0.01).unwrap();
        let x = [1.3, 0.2];
        assert!((hvn.log_density(&x).unwrap() - vn.log_density(&x).unwrap()).abs() > 1e-6);
        // Both peak on the variety.
        assert_eq!(hvn.log_density(&[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn mvn_matches_vn_for_single_equality() {
        let vn = DensityModel::vn(circle_system(), 0.0025).unwrap();
        let mvn = DensityModel::mvn_isotropic(circle_system(), 0.0025).unwrap();
        for x in [[0.3, -1.2], [1.0, 1.0], [-0.4, 0.1], [2.0, 0.5]] {
            let a = vn.log_density(&x).unwrap();
            let b = mvn.log_density(&x).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let vn = DensityModel::vn(circle_system(), 0.04).unwrap();
        for x in [[1.2, 0.1], [0.5, -0.8], [-1.1, 0.9]] {
            let g = vn.grad_log_density(&x).unwrap();
            let fd = fd_grad(&vn, &x);
            for k in 0..2 {
                assert!((g[k] - fd[k]).abs() < 1e-6 * fd[k].abs().max(1.0), "{g:?} vs {fd:?}");
            }
        }
    }

    #[test]
    fn vn_gradient_points_toward_variety() {
        let vn = DensityModel::vn(circle_system(), 0.01).unwrap();
        let g = vn.grad_log_density(&[1.2, 0.0]).unwrap();
        assert!(g[0] < 0.0);
        assert!(g[1].abs() < 1e-12);
        let on = vn.grad_log_density(&[1.0, 0.0]).unwrap();
        assert!(on.norm() < 1e-12);
    }

    #[test]
    fn rank_deficiency_detected() {
        // grad g = 0 at the origin for the circle.
        let vn = DensityModel::vn(circle_system(), 0.01).unwrap();
        match vn.residual_normalized(&[0.0, 0.0]) {
            Err(DensityError::RankDeficient { smallest_singular_value, .. }) => {
                assert_eq!(smallest_singular_value, 0.0);
            }
            other => panic!("expected RankDeficient, got {other:?}"),
        }
        // Clamped evaluation survives and reports it.
        let out = vn.eval_clamped(&[0.0, 0.0], true).unwrap();
        assert!(out.clamped);
        assert_eq!(out.log_density, f64::NEG_INFINITY);
    }

    #[test]
    fn truncation_box_masks_density() {
        let bounds = AxisBox::cube(-1.1, 1.1, 2).unwrap();
        let vn = DensityModel::vn(circle_system(), 0.01).unwrap().with_truncation(bounds).unwrap();
        assert_eq!(vn.log_density(&[1.2, 0.0]).unwrap(), f64::NEG_INFINITY);
        assert!(vn.log_density(&[1.0, 0.0]).unwrap() == 0.0);
        assert!(matches!(
            vn.grad_log_density(&[1.2, 0.0]),
            Err(DensityError::OutsideTruncation)
        ));
    }

    #[test]
    fn induced_uniform_support() {
        let base = BaseDistribution::Uniform { lo: -0.1, hi: 0.1 };
        let model = DensityModel::induced(circle_system(), base).unwrap();
        assert_eq!(model.log_density(&[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(model.log_density(&[1.5, 0.0]).unwrap(), f64::NEG_INFINITY);
        assert!(!model.supports_gradient());
        assert!(model.grad_log_density(&[1.02, 0.0]).is_err());
    }

    #[test]
    fn induced_beta_gradient_matches_fd() {
        let base = BaseDistribution::Beta { alpha: 2.0, beta: 2.0, shift: -0.25, scale: 0.5 };
        let model = DensityModel::induced(circle_system(), base).unwrap();
        assert!(model.supports_gradient());
        for x in [[1.05, 0.0], [0.7, 0.75], [-0.95, 0.2]] {
            let g = model.grad_log_density(&x).unwrap();
            let fd = fd_grad(&model, &x);
            for k in 0..2 {
                assert!((g[k] - fd[k]).abs() < 1e-5 * fd[k].abs().max(1.0), "{g:?} vs {fd:?}");
            }
        }
    }

    #[test]
    fn kind_validation() {
        let ctx = VarContext::new(["x", "y"]).unwrap();
        let two = PolySystem::equalities_only(
            &ctx,
            vec![Polynomial::parse("x", &ctx).unwrap(), Polynomial::parse("y", &ctx).unwrap()],
        )
        .unwrap();
        assert!(DensityModel::vn(two.clone(), 0.01).is_err());
        assert!(DensityModel::mvn_isotropic(two, 0.01).is_ok());
        assert!(DensityModel::vn(circle_system(), 0.0).is_err());
        assert!(DensityModel::vn(circle_system(), f64::NAN).is_err());
    }

    #[test]
    fn mvn_dense_covariance_validation() {
        let ctx = VarContext::new(["x", "y"]).unwrap();
        let sys = PolySystem::equalities_only(
            &ctx,
            vec![Polynomial::parse("x - 0.5", &ctx).unwrap(), Polynomial::parse("y", &ctx).unwrap()],
        )
        .unwrap();
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]); // not PD
        assert!(DensityModel::mvn(sys.clone(), bad).is_err());
        let good = DMatrix::from_row_slice(2, 2, &[0.04, 0.018, 0.018, 0.09]);
        assert!(DensityModel::mvn(sys, good).is_ok());
    }
}
