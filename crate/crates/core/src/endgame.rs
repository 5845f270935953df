//! Projection onto a variety by homotopy continuation.
//!
//! To move x0 onto V(g) we track the first-order optimality system of
//! "minimize |x - x0| subject to h(x) = t h(x0)" as t shrinks from 1 to 0,
//! with h = sum of g_i^2. The multiplier lives on a random affine patch
//! (alpha0, alpha1), giving the square system in z = (x, lambda0, lambda1):
//!
//!   H(z; t) = [ h(x) - t h(x0)
//!               lambda0 (x - x0) + lambda1 grad h(x)
//!               lambda0 + alpha1 lambda1 - alpha0 ]
//!
//! At t = 1 the start (x0, alpha0, 0) is an exact zero. Each step solves the
//! Davidenko system J_H dz/dt = -dH/dt for an Euler prediction, then Newton-
//! corrects at the new t, halving dt on failure and growing it on success.
//! At t = 0 the system is genuinely singular (grad h vanishes on the
//! variety), so tracking stops at a small t_end and a Gauss-Newton polish on
//! the original equations closes the remaining gap.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::batch::{RowProjection, SampleBatch};
use crate::poly::{PolyError, PolySystem, Polynomial};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EndgameError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("start point has non-finite coordinates")]
    NonFiniteStart,
    #[error("no usable random patch found in 16 draws")]
    PatchExhausted,
    #[error(transparent)]
    Poly(#[from] PolyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    /// Reached t_end and the polished point satisfies |h| < 1e-8.
    Converged,
    /// The step size underflowed (or the path hit a singularity) before the
    /// end; the partial point is still reported.
    Stalled,
}

/// Step-size and corrector controls for the tracker.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackControls {
    pub dt_init: f64,
    pub dt_min: f64,
    /// Newton tolerance on |H|, scaled by max(1, |h(x0)|).
    pub newton_tol: f64,
    pub newton_max_iter: u32,
    /// Where tracking stops; the t = 0 endpoint itself is singular.
    pub t_end: f64,
}

impl Default for TrackControls {
    fn default() -> Self {
        TrackControls {
            dt_init: 0.1,
            dt_min: 1e-10,
            newton_tol: 1e-10,
            newton_max_iter: 10,
            t_end: 1e-12,
        }
    }
}

const CONVERGED_RESIDUAL: f64 = 1e-8;
/// Total accepted + rejected steps before declaring the path hopeless.
const MAX_STEPS: u32 = 20_000;

#[derive(Debug, Clone)]
pub struct ProjectionResult {
    pub x_star: Vec<f64>,
    /// Final multiplier (lambda0, lambda1) on the affine patch.
    pub lambda: (f64, f64),
    pub t_reached: f64,
    pub status: TrackStatus,
    /// |h(x_star)| with h the sum of squared equalities.
    pub residual: f64,
    /// Accepted t values, strictly decreasing from 1.
    pub t_path: Vec<f64>,
}

/// A single projection problem: the homotopy data for one start point.
#[derive(Debug, Clone)]
pub struct HomotopyTracker {
    system: PolySystem,
    sys_jac: Vec<Vec<Polynomial>>,
    h: Polynomial,
    grad_h: Vec<Polynomial>,
    hess_h: Vec<Vec<Polynomial>>,
    x0: Vec<f64>,
    h0: f64,
    patch: (f64, f64),
    controls: TrackControls,
}

/// Build the tracker for projecting `x0` onto the variety of `sys`. The
/// patch (alpha0, alpha1) is standard normal from `seed`, redrawn while
/// alpha0 is too close to zero for the start state to be rescalable.
pub fn build_tracker(
    sys: &PolySystem,
    x0: &[f64],
    seed: u64,
) -> Result<HomotopyTracker, EndgameError> {
    build_tracker_with(sys, x0, seed, TrackControls::default())
}

pub fn build_tracker_with(
    sys: &PolySystem,
    x0: &[f64],
    seed: u64,
    controls: TrackControls,
) -> Result<HomotopyTracker, EndgameError> {
    let n = sys.n_vars();
    if x0.len() != n {
        return Err(EndgameError::DimensionMismatch { expected: n, got: x0.len() });
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(EndgameError::NonFiniteStart);
    }
    let h = sys.sum_of_squares();
    let grad_h = h.gradient();
    let hess_h: Vec<Vec<Polynomial>> =
        grad_h.iter().map(|d| d.gradient()).collect();
    let h0 = h.eval(x0)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut patch = None;
    for _ in 0..16 {
        let a0: f64 = rng.sample(StandardNormal);
        let a1: f64 = rng.sample(StandardNormal);
        if a0.abs() >= 1e-8 {
            patch = Some((a0, a1));
            break;
        }
    }
    let patch = patch.ok_or(EndgameError::PatchExhausted)?;

    Ok(HomotopyTracker {
        system: sys.clone(),
        sys_jac: sys.jacobian(),
        h,
        grad_h,
        hess_h,
        x0: x0.to_vec(),
        h0,
        patch,
        controls,
    })
}

impl HomotopyTracker {
    pub fn patch(&self) -> (f64, f64) {
        self.patch
    }

    pub fn controls(&self) -> &TrackControls {
        &self.controls
    }

    /// h(x0); zero exactly when the start already lies on the variety.
    pub fn start_level(&self) -> f64 {
        self.h0
    }

    fn dim(&self) -> usize {
        self.x0.len()
    }

    /// The start state z = (x0, alpha0, 0) at t = 1.
    fn start_state(&self) -> DVector<f64> {
        let n = self.dim();
        let mut z = DVector::zeros(n + 2);
        for (i, &v) in self.x0.iter().enumerate() {
            z[i] = v;
        }
        z[n] = self.patch.0;
        z[n + 1] = 0.0;
        z
    }

    /// |H(start; 1)|, which is zero up to evaluation round-off.
    pub fn start_residual(&self) -> f64 {
        self.residual_vec(&self.start_state(), 1.0).norm()
    }

    fn residual_vec(&self, z: &DVector<f64>, t: f64) -> DVector<f64> {
        let n = self.dim();
        let x = z.rows(0, n).as_slice().to_vec();
        let (l0, l1) = (z[n], z[n + 1]);
        let mut r = DVector::zeros(n + 2);
        r[0] = self.h.eval_unchecked(&x) - t * self.h0;
        for i in 0..n {
            r[1 + i] = l0 * (x[i] - self.x0[i]) + l1 * self.grad_h[i].eval_unchecked(&x);
        }
        r[n + 1] = l0 + self.patch.1 * l1 - self.patch.0;
        r
    }

    fn jacobian_matrix(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let x = z.rows(0, n).as_slice().to_vec();
        let (l0, l1) = (z[n], z[n + 1]);
        let mut jac = DMatrix::zeros(n + 2, n + 2);
        for j in 0..n {
            jac[(0, j)] = self.grad_h[j].eval_unchecked(&x);
        }
        for i in 0..n {
            for j in 0..n {
                let mut v = l1 * self.hess_h[i][j].eval_unchecked(&x);
                if i == j {
                    v += l0;
                }
                jac[(1 + i, j)] = v;
            }
            jac[(1 + i, n)] = x[i] - self.x0[i];
            jac[(1 + i, n + 1)] = self.grad_h[i].eval_unchecked(&x);
        }
        jac[(n + 1, n)] = 1.0;
        jac[(n + 1, n + 1)] = self.patch.1;
        jac
    }

    /// Newton-correct H(z; t) = 0 at fixed t. Ok(z) when |H| falls under the
    /// scaled tolerance within the iteration budget.
    fn newton_correct(&self, mut z: DVector<f64>, t: f64) -> Option<DVector<f64>> {
        let tol = self.controls.newton_tol * self.h0.abs().max(1.0);
        for _ in 0..=self.controls.newton_max_iter {
            let r = self.residual_vec(&z, t);
            if r.norm() <= tol {
                return Some(z);
            }
            let lu = self.jacobian_matrix(&z).lu();
            let delta = lu.solve(&r)?;
            if !delta.iter().all(|v| v.is_finite()) {
                return None;
            }
            z -= delta;
        }
        None
    }

    /// Track from t = 1 to t_end, then polish. Consumes the tracker: each
    /// tracker describes exactly one path.
    pub fn track(self) -> ProjectionResult {
        let n = self.dim();
        let c = &self.controls;

        // Already on the variety (to round-off): the whole path is constant.
        if self.h0.abs() < 1e-16 {
            return ProjectionResult {
                x_star: self.x0.clone(),
                lambda: (self.patch.0, 0.0),
                t_reached: c.t_end,
                status: TrackStatus::Converged,
                residual: self.h0.abs(),
                t_path: vec![1.0],
            };
        }

        let mut z = self.start_state();
        let mut t = 1.0;
        let mut dt = c.dt_init;
        let mut t_path = vec![1.0];
        let mut stalled = false;
        let mut steps = 0u32;

        while t > c.t_end {
            steps += 1;
            if steps > MAX_STEPS {
                stalled = true;
                break;
            }
            let dt_eff = dt.min(t - c.t_end);
            let t_new = if dt_eff >= t - c.t_end { c.t_end } else { t - dt_eff };

            // Euler predictor: J_H zdot = -dH/dt = (h0, 0, ..., 0).
            let mut rhs = DVector::zeros(n + 2);
            rhs[0] = self.h0;
            let predicted = self
                .jacobian_matrix(&z)
                .lu()
                .solve(&rhs)
                .filter(|zdot| zdot.iter().all(|v| v.is_finite()))
                .map(|zdot| &z - zdot * dt_eff);

            let corrected = predicted.and_then(|zp| self.newton_correct(zp, t_new));
            match corrected {
                Some(znew) => {
                    z = znew;
                    t = t_new;
                    t_path.push(t);
                    dt = dt_eff * 1.25;
                }
                None => {
                    dt *= 0.5;
                    if dt < c.dt_min {
                        stalled = true;
                        break;
                    }
                }
            }
        }

        let mut x: Vec<f64> = z.rows(0, n).as_slice().to_vec();
        if !stalled {
            x = self.polish(x);
        }
        let residual = self.h.eval_unchecked(&x).abs();
        let status = if !stalled && residual < CONVERGED_RESIDUAL {
            TrackStatus::Converged
        } else {
            TrackStatus::Stalled
        };
        ProjectionResult {
            x_star: x,
            lambda: (z[n], z[n + 1]),
            t_reached: t,
            status,
            residual,
            t_path,
        }
    }

    /// Gauss-Newton iteration on the original equalities g(x) = 0, taking
    /// pseudoinverse steps x <- x - J+ g. The tracked point is kept whenever
    /// polishing fails to reduce |h|.
    fn polish(&self, x: Vec<f64>) -> Vec<f64> {
        let n = self.dim();
        let m = self.system.n_equalities();
        let mut best = x.clone();
        let mut best_h = self.h.eval_unchecked(&best).abs();
        let mut cur = x;
        for _ in 0..self.controls.newton_max_iter {
            let g = DVector::from_iterator(
                m,
                self.system.equalities().iter().map(|p| p.eval_unchecked(&cur)),
            );
            let jac = DMatrix::from_fn(m, n, |i, j| self.sys_jac[i][j].eval_unchecked(&cur));
            let step = if n >= m {
                let gram = &jac * jac.transpose();
                match gram.cholesky() {
                    Some(ch) => jac.transpose() * ch.solve(&g),
                    None => break,
                }
            } else {
                let gram = jac.transpose() * &jac;
                match gram.cholesky() {
                    Some(ch) => ch.solve(&(jac.transpose() * &g)),
                    None => break,
                }
            };
            if !step.iter().all(|v| v.is_finite()) {
                break;
            }
            for i in 0..n {
                cur[i] -= step[i];
            }
            let h_now = self.h.eval_unchecked(&cur).abs();
            if h_now < best_h {
                best_h = h_now;
                best = cur.clone();
            } else {
                break;
            }
        }
        best
    }
}

/// Project every row of a batch, in parallel. Coordinates are replaced by
/// the projected points; stalled rows keep their final (unconverged) point
/// and are flagged, never dropped. Row i uses a patch derived from
/// (seed, i), so the result is deterministic and scheduling-independent.
pub fn project_batch(
    sys: &PolySystem,
    batch: &SampleBatch,
    controls: &TrackControls,
    seed: u64,
) -> Result<SampleBatch, EndgameError> {
    if batch.dim() != sys.n_vars() {
        return Err(EndgameError::DimensionMismatch {
            expected: sys.n_vars(),
            got: batch.dim(),
        });
    }
    let indices: Vec<usize> = (0..batch.len()).collect();
    let results: Vec<(Vec<f64>, RowProjection)> = indices
        .par_iter()
        .map(|&i| {
            let row_seed = seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            match build_tracker_with(sys, batch.row(i), row_seed, controls.clone()) {
                Ok(tracker) => {
                    let r = tracker.track();
                    (
                        r.x_star,
                        RowProjection {
                            status: r.status,
                            residual: r.residual,
                            t_reached: r.t_reached,
                        },
                    )
                }
                // Vanishingly unlikely (16 degenerate normal draws); keep the
                // row honest rather than aborting the whole batch.
                Err(_) => (
                    batch.row(i).to_vec(),
                    RowProjection {
                        status: TrackStatus::Stalled,
                        residual: f64::NAN,
                        t_reached: 1.0,
                    },
                ),
            }
        })
        .collect();

    let mut points = Vec::with_capacity(batch.len() * batch.dim());
    let mut rows = Vec::with_capacity(batch.len());
    for (x, row) in results {
        points.extend_from_slice(&x);
        rows.push(row);
    }
    Ok(batch.with_projection(points, rows).expect("row counts match"))
}
