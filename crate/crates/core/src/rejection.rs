//! Rejection sampling of truncated variety distributions over a box.
//!
//! The unnormalized densities are bounded by 1 (tight on the variety), so a
//! constant envelope over uniform box proposals suffices: draw x' uniformly,
//! draw u, keep x' when u <= p(x'). Band mode replaces the density test with
//! a hard threshold on the scalar residual.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::batch::{AxisBox, RowMeta, SampleBatch};
use crate::density::{BaseDistribution, DensityError, DensityKind, DensityModel};

#[derive(Debug, Clone, PartialEq)]
pub enum RejectionMode {
    /// Accept with probability equal to the unnormalized density.
    Density,
    /// Accept when the scalar band residual has magnitude at most epsilon.
    Band { epsilon: f64 },
}

#[derive(Debug, Clone)]
pub struct RejectionConfig {
    pub bounds: AxisBox,
    pub n_proposals: u64,
    pub seed: u64,
    pub mode: RejectionMode,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RejectionError {
    #[error("n_proposals must be positive")]
    NoProposals,
    #[error("band width must be positive and finite")]
    InvalidBand,
    #[error("band mode requires a VN, HVN, or uniform-induced target")]
    BandKindUnsupported,
    #[error("proposal box dimension {got} does not match the model dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("rejection needs an unnormalized density bounded by 1; this base distribution is unbounded")]
    UnboundedDensity,
    #[error(transparent)]
    Density(#[from] DensityError),
}

struct AcceptedRow {
    proposal_index: u64,
    point: Vec<f64>,
    log_density: f64,
    residual_norm: f64,
}

#[derive(Default)]
struct ChunkOut {
    rows: Vec<AcceptedRow>,
    rank_deficient: u64,
}

/// Draw independent samples by rejection. Deterministic for a given seed:
/// proposal i derives its RNG from (seed, i), so the result does not depend
/// on how proposals are scheduled across threads.
pub fn sample_rejection(
    model: &DensityModel,
    cfg: &RejectionConfig,
) -> Result<SampleBatch, RejectionError> {
    let n = model.n_vars();
    if cfg.bounds.dim() != n {
        return Err(RejectionError::DimensionMismatch { expected: n, got: cfg.bounds.dim() });
    }
    if cfg.n_proposals == 0 {
        return Err(RejectionError::NoProposals);
    }
    match cfg.mode {
        RejectionMode::Band { epsilon } => {
            if !(epsilon > 0.0 && epsilon.is_finite()) {
                return Err(RejectionError::InvalidBand);
            }
            let band_ok = matches!(
                model.kind(),
                DensityKind::Vn { .. }
                    | DensityKind::Hvn { .. }
                    | DensityKind::Induced { base: BaseDistribution::Uniform { .. } }
            );
            if !band_ok {
                return Err(RejectionError::BandKindUnsupported);
            }
        }
        RejectionMode::Density => {
            if let DensityKind::Induced { base } = model.kind() {
                if !base.bounded_by_one() {
                    return Err(RejectionError::UnboundedDensity);
                }
            }
        }
    }

    let base_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let chunk: u64 = 4096;
    let starts: Vec<u64> = (0..cfg.n_proposals).step_by(chunk as usize).collect();
    let chunks: Vec<ChunkOut> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + chunk).min(cfg.n_proposals);
            let mut out = ChunkOut::default();
            let mut unit = vec![0.0; n];
            for i in start..end {
                let mut rng = base_rng.clone();
                rng.set_stream(i);
                for u in unit.iter_mut() {
                    *u = rng.gen::<f64>();
                }
                let point = cfg.bounds.point_from_unit(&unit);
                match evaluate_proposal(model, cfg, &point, &mut rng) {
                    Ok(Some((log_density, residual_norm))) => out.rows.push(AcceptedRow {
                        proposal_index: i,
                        point: point.clone(),
                        log_density,
                        residual_norm,
                    }),
                    Ok(None) => {}
                    Err(DensityError::RankDeficient { .. }) => out.rank_deficient += 1,
                    // Anything else is a configuration-level defect; the
                    // validation above should have caught it.
                    Err(e) => panic!("unexpected density error during rejection: {e}"),
                }
            }
            out
        })
        .collect();

    let mut batch = SampleBatch::new(model.system().context().names().to_vec());
    let mut accepted = 0u64;
    let mut rank_deficient = 0u64;
    for c in chunks {
        rank_deficient += c.rank_deficient;
        for row in c.rows {
            accepted += 1;
            batch.push_row(
                &row.point,
                RowMeta {
                    proposal_index: row.proposal_index,
                    chain_id: 0,
                    log_density: row.log_density,
                    residual_norm: row.residual_norm,
                    accepted: true,
                },
            );
        }
    }
    batch.summary.proposed = cfg.n_proposals;
    batch.summary.accepted = accepted;
    batch.summary.acceptance_rate = accepted as f64 / cfg.n_proposals as f64;
    batch.summary.rank_deficient = rank_deficient;
    Ok(batch)
}

/// Accept/reject one proposal; `Some((log_density, residual_norm))` when it
/// is kept. Band mode draws no auxiliary uniform, so the two modes consume
/// different amounts of the proposal's RNG stream by design.
fn evaluate_proposal(
    model: &DensityModel,
    cfg: &RejectionConfig,
    point: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<Option<(f64, f64)>, DensityError> {
    match cfg.mode {
        RejectionMode::Density => {
            // u is uniform on (0, 1]: a zero-density point can never be
            // accepted, while the envelope stays tight on the variety.
            let u = 1.0 - rng.gen::<f64>();
            let log_density = model.log_density(point)?;
            if u <= log_density.exp() {
                Ok(Some((log_density, model.residual_norm(point)?)))
            } else {
                Ok(None)
            }
        }
        RejectionMode::Band { epsilon } => {
            let r = model.band_residual(point)?;
            let inside = model.truncation().map_or(true, |b| b.contains(point));
            if r.abs() <= epsilon && inside {
                Ok(Some((model.log_density(point)?, model.residual_norm(point)?)))
            } else {
                Ok(None)
            }
        }
    }
}
