//! Hamiltonian Monte Carlo over variety densities.
//!
//! Potential U(x) = -log p(x), kinetic K(p) = |p|^2 / 2m with scalar mass
//! m = sigma2_m. Chains are independent: chain k draws from an RNG stream
//! derived from (seed, k), so a run is reproducible regardless of how the
//! chains are scheduled. Warmup adapts the step size by dual averaging
//! toward a target acceptance rate, then freezes it for sampling.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::batch::{AxisBox, ChainStats, RowMeta, SampleBatch};
use crate::density::{DensityError, DensityModel};

#[derive(Debug, Clone)]
pub enum HmcInit {
    /// Start each chain at an independent uniform draw from the box,
    /// retrying (up to 100 times) until the density there is finite.
    Overdispersed(AxisBox),
    /// One starting point per chain, in chain order.
    Explicit(Vec<Vec<f64>>),
}

#[derive(Debug, Clone)]
pub struct HmcConfig {
    pub n_chains: u32,
    pub n_warmup: u64,
    pub n_samples: u64,
    /// Initial leapfrog step size; adapted during warmup.
    pub step_size: f64,
    /// Base leapfrog step count; each transition jitters it by +-20%.
    pub n_leapfrog: u32,
    /// Scalar mass sigma2_m: momenta are N(0, sigma2_m I).
    pub mass: f64,
    pub init: HmcInit,
    pub seed: u64,
    /// Dual-averaging target acceptance rate, in (0, 1).
    pub target_accept: f64,
}

impl HmcConfig {
    pub fn new(init: HmcInit) -> Self {
        HmcConfig {
            n_chains: 4,
            n_warmup: 1000,
            n_samples: 1000,
            step_size: 0.1,
            n_leapfrog: 32,
            mass: 1.0,
            init,
            seed: 0,
            target_accept: 0.8,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HmcError {
    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("the density kind does not provide gradients, which HMC requires")]
    GradientUnavailable,
    #[error("position or momentum became non-finite at leapfrog step {step}")]
    NonFinite { step: u32 },
    #[error("all {0} chains failed")]
    AllChainsFailed(u32),
    #[error(transparent)]
    Density(#[from] DensityError),
}

/// One chain's current position and running tallies. Momentum is drawn
/// fresh each transition and never stored.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub position: Vec<f64>,
    pub log_density: f64,
    pub transitions: u64,
    pub accepted: u64,
    pub clamped_evals: u64,
}

impl ChainState {
    /// Evaluate the density at the starting position and set up tallies.
    pub fn new(model: &DensityModel, position: Vec<f64>) -> Result<Self, HmcError> {
        let log_density = model.log_density(&position)?;
        Ok(ChainState { position, log_density, transitions: 0, accepted: 0, clamped_evals: 0 })
    }
}

#[derive(Debug, Clone)]
pub struct LeapfrogResult {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    /// Log-density at the final position (truncation applied).
    pub log_density: f64,
    /// Gram solves that needed the eigenvalue-clamped fallback.
    pub clamped_evals: u64,
    /// Whether the final evaluation itself was clamped; such endpoints are
    /// treated as rank-deficient and the transition is rejected.
    pub final_eval_clamped: bool,
}

/// Standard leapfrog integration of Hamilton's equations: a half-step of
/// momentum, alternating full steps, and a closing half-step. The gradient
/// is taken from the untruncated density, with singular Gram matrices
/// clamped (and counted) rather than failing mid-trajectory.
pub fn leapfrog(
    model: &DensityModel,
    position: &[f64],
    momentum: &[f64],
    step: f64,
    n_steps: u32,
    mass: f64,
) -> Result<LeapfrogResult, HmcError> {
    let n = model.n_vars();
    if position.len() != n {
        return Err(HmcError::DimensionMismatch { expected: n, got: position.len() });
    }
    if momentum.len() != n {
        return Err(HmcError::DimensionMismatch { expected: n, got: momentum.len() });
    }
    if !model.supports_gradient() {
        return Err(HmcError::GradientUnavailable);
    }
    if n_steps == 0 || !(mass > 0.0 && mass.is_finite()) || !step.is_finite() {
        return Err(HmcError::InvalidConfig {
            reason: "leapfrog needs n_steps >= 1, finite step, positive mass".into(),
        });
    }

    let mut x = DVector::from_column_slice(position);
    let mut p = DVector::from_column_slice(momentum);
    let mut clamped_evals = 0u64;
    let mut eval = |x: &DVector<f64>| -> Result<(f64, DVector<f64>, bool), HmcError> {
        let out = model.eval_clamped(x.as_slice(), true)?;
        if out.clamped {
            clamped_evals += 1;
        }
        Ok((out.log_density, out.grad.expect("gradient requested"), out.clamped))
    };

    let (_, grad, _) = eval(&x)?;
    p += grad * (0.5 * step);
    if !p.iter().all(|v| v.is_finite()) {
        return Err(HmcError::NonFinite { step: 0 });
    }
    let mut endpoint = (f64::NEG_INFINITY, false);
    for i in 1..=n_steps {
        x += &p * (step / mass);
        let (logp, grad, clamped) = eval(&x)?;
        if i < n_steps {
            p += grad * step;
        } else {
            p += grad * (0.5 * step);
            endpoint = (logp, clamped);
        }
        if !(x.iter().all(|v| v.is_finite()) && p.iter().all(|v| v.is_finite())) {
            return Err(HmcError::NonFinite { step: i });
        }
    }
    Ok(LeapfrogResult {
        position: x.as_slice().to_vec(),
        momentum: p.as_slice().to_vec(),
        log_density: endpoint.0,
        clamped_evals,
        final_eval_clamped: endpoint.1,
    })
}

/// One Metropolis-corrected HMC transition: draw a momentum, integrate with
/// a +-20% jittered step count, accept with probability min(1, exp(-dH)).
/// Returns that acceptance probability (0 on integrator failure) for step
/// size adaptation. The state is left on the old position when rejected.
pub fn hmc_transition(
    model: &DensityModel,
    state: &mut ChainState,
    step: f64,
    n_leapfrog: u32,
    mass: f64,
    rng: &mut impl Rng,
) -> f64 {
    let n = model.n_vars();
    let sd = mass.sqrt();
    let p0 = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * sd));
    let lo = (0.8 * f64::from(n_leapfrog)).ceil() as u32;
    let hi = ((1.2 * f64::from(n_leapfrog)).floor() as u32).max(lo);
    let jittered = rng.gen_range(lo..=hi);
    let u: f64 = rng.gen();

    state.transitions += 1;
    let result = leapfrog(model, &state.position, p0.as_slice(), step, jittered, mass);
    let alpha = match &result {
        Ok(r) if !r.final_eval_clamped => {
            let h_old = -state.log_density + p0.norm_squared() / (2.0 * mass);
            let k_new: f64 = r.momentum.iter().map(|v| v * v).sum::<f64>() / (2.0 * mass);
            let h_new = -r.log_density + k_new;
            let delta = h_old - h_new;
            if delta.is_nan() {
                0.0
            } else {
                delta.exp().min(1.0)
            }
        }
        _ => 0.0,
    };
    if let Ok(r) = &result {
        state.clamped_evals += r.clamped_evals;
    }
    if u < alpha {
        let r = result.expect("alpha > 0 implies a finite trajectory");
        state.position = r.position;
        state.log_density = r.log_density;
        state.accepted += 1;
    }
    alpha
}

/// Dual-averaging step size adaptation (gamma = 0.05, t0 = 10, kappa = 0.75),
/// with log step size clamped to [ln 1e-8, ln 1e3] to contain divergence
/// spirals. Freezing returns the averaged iterate.
struct DualAveraging {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    m: f64,
    target: f64,
}

impl DualAveraging {
    fn new(eps0: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps0).ln(),
            log_eps: eps0.ln(),
            log_eps_bar: eps0.ln(),
            h_bar: 0.0,
            m: 0.0,
            target,
        }
    }

    fn update(&mut self, alpha: f64) -> f64 {
        self.m += 1.0;
        let frac = 1.0 / (self.m + 10.0);
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - alpha);
        let raw = self.mu - self.m.sqrt() / 0.05 * self.h_bar;
        self.log_eps = raw.clamp(1e-8_f64.ln(), 1e3_f64.ln());
        let w = self.m.powf(-0.75);
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar;
        self.log_eps.exp()
    }

    fn frozen(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

struct ChainRun {
    stats: ChainStats,
    rows: Option<Vec<(Vec<f64>, RowMeta)>>,
}

/// Run all chains in parallel and concatenate their draws in chain order.
/// The run succeeds if at least one chain completes; failed chains are
/// reported through their summary entry instead of aborting the run.
pub fn run_chains(model: &DensityModel, cfg: &HmcConfig) -> Result<SampleBatch, HmcError> {
    validate(model, cfg)?;
    let runs: Vec<ChainRun> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|chain_id| run_single_chain(model, cfg, chain_id))
        .collect();

    let mut batch = SampleBatch::new(model.system().context().names().to_vec());
    let mut completed = 0u32;
    for run in runs {
        if let Some(rows) = run.rows {
            completed += 1;
            for (x, meta) in rows {
                batch.push_row(&x, meta);
            }
        }
        let s = &run.stats;
        batch.summary.proposed += s.transitions;
        batch.summary.accepted += s.accepted;
        batch.summary.chains.push(run.stats);
    }
    if completed == 0 {
        return Err(HmcError::AllChainsFailed(cfg.n_chains));
    }
    batch.summary.acceptance_rate = if batch.summary.proposed > 0 {
        batch.summary.accepted as f64 / batch.summary.proposed as f64
    } else {
        0.0
    };
    Ok(batch)
}

fn validate(model: &DensityModel, cfg: &HmcConfig) -> Result<(), HmcError> {
    let n = model.n_vars();
    let invalid = |reason: &str| Err(HmcError::InvalidConfig { reason: reason.into() });
    if cfg.n_chains == 0 {
        return invalid("n_chains must be positive");
    }
    if !(cfg.step_size > 0.0 && cfg.step_size.is_finite()) {
        return invalid("step_size must be positive and finite");
    }
    if cfg.n_leapfrog == 0 {
        return invalid("n_leapfrog must be positive");
    }
    if !(cfg.mass > 0.0 && cfg.mass.is_finite()) {
        return invalid("mass must be positive and finite");
    }
    if !(cfg.target_accept > 0.0 && cfg.target_accept < 1.0) {
        return invalid("target_accept must lie strictly between 0 and 1");
    }
    if !model.supports_gradient() {
        return Err(HmcError::GradientUnavailable);
    }
    match &cfg.init {
        HmcInit::Overdispersed(bounds) => {
            if bounds.dim() != n {
                return Err(HmcError::DimensionMismatch { expected: n, got: bounds.dim() });
            }
        }
        HmcInit::Explicit(points) => {
            if points.len() != cfg.n_chains as usize {
                return Err(HmcError::InvalidConfig {
                    reason: format!(
                        "explicit init needs exactly {} points, got {}",
                        cfg.n_chains,
                        points.len()
                    ),
                });
            }
            for (i, point) in points.iter().enumerate() {
                if point.len() != n {
                    return Err(HmcError::DimensionMismatch { expected: n, got: point.len() });
                }
                if !point.iter().all(|v| v.is_finite()) {
                    return Err(HmcError::InvalidConfig {
                        reason: format!("initial point for chain {i} has non-finite coordinates"),
                    });
                }
                if let Some(b) = model.truncation() {
                    if !b.contains(point) {
                        return Err(HmcError::InvalidConfig {
                            reason: format!(
                                "initial point for chain {i} lies outside the truncation box"
                            ),
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

fn run_single_chain(model: &DensityModel, cfg: &HmcConfig, chain_id: u32) -> ChainRun {
    let n = model.n_vars();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::from(chain_id));

    let failed = |cause: String| ChainRun {
        stats: ChainStats {
            chain_id,
            transitions: 0,
            accepted: 0,
            acceptance_rate: 0.0,
            step_size: 0.0,
            clamped_gram_evals: 0,
            error: Some(cause),
        },
        rows: None,
    };

    let start = match &cfg.init {
        HmcInit::Explicit(points) => points[chain_id as usize].clone(),
        HmcInit::Overdispersed(bounds) => {
            let mut found = None;
            let mut unit = vec![0.0; n];
            for _ in 0..100 {
                for u in unit.iter_mut() {
                    *u = rng.gen();
                }
                let candidate = bounds.point_from_unit(&unit);
                if let Ok(lp) = model.log_density(&candidate) {
                    if lp.is_finite() {
                        found = Some(candidate);
                        break;
                    }
                }
            }
            match found {
                Some(x) => x,
                None => {
                    return failed(
                        "no starting point with finite density found in 100 draws".into(),
                    )
                }
            }
        }
    };

    let mut state = match ChainState::new(model, start) {
        Ok(s) => s,
        Err(e) => return failed(format!("initial evaluation failed: {e}")),
    };

    let mut adapt = DualAveraging::new(cfg.step_size, cfg.target_accept);
    let mut eps = cfg.step_size;
    for _ in 0..cfg.n_warmup {
        let alpha = hmc_transition(model, &mut state, eps, cfg.n_leapfrog, cfg.mass, &mut rng);
        eps = adapt.update(alpha);
    }
    let frozen = if cfg.n_warmup > 0 { adapt.frozen() } else { cfg.step_size };

    let mut rows = Vec::with_capacity(cfg.n_samples as usize);
    for t in 0..cfg.n_samples {
        let before = state.accepted;
        hmc_transition(model, &mut state, frozen, cfg.n_leapfrog, cfg.mass, &mut rng);
        let residual_norm = model.residual_norm(&state.position).unwrap_or(f64::NAN);
        rows.push((
            state.position.clone(),
            RowMeta {
                proposal_index: t,
                chain_id,
                log_density: state.log_density,
                residual_norm,
                accepted: state.accepted > before,
            },
        ));
    }

    ChainRun {
        stats: ChainStats {
            chain_id,
            transitions: state.transitions,
            accepted: state.accepted,
            acceptance_rate: if state.transitions > 0 {
                state.accepted as f64 / state.transitions as f64
            } else {
                0.0
            },
            step_size: frozen,
            clamped_gram_evals: state.clamped_evals,
            error: None,
        },
        rows: Some(rows),
    }
}
