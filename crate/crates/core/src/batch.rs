//! Sample batches: points plus per-row metadata and a run summary.
//!
//! Both samplers and the endgame produce or transform [`SampleBatch`] values,
//! so the type lives here rather than in either sampler module.

use thiserror::Error;

use crate::endgame::TrackStatus;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BatchError {
    #[error("invalid box: {reason}")]
    InvalidBox { reason: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Axis-aligned box [lo_i, hi_i]^n with finite bounds and lo_i < hi_i.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, BatchError> {
        if lo.len() != hi.len() {
            return Err(BatchError::DimensionMismatch { expected: lo.len(), got: hi.len() });
        }
        if lo.is_empty() {
            return Err(BatchError::InvalidBox { reason: "box has zero dimensions".into() });
        }
        for (i, (&a, &b)) in lo.iter().zip(&hi).enumerate() {
            if !a.is_finite() || !b.is_finite() {
                return Err(BatchError::InvalidBox {
                    reason: format!("bounds for dimension {i} are not finite"),
                });
            }
            if a >= b {
                return Err(BatchError::InvalidBox {
                    reason: format!("lo >= hi in dimension {i} ({a} >= {b})"),
                });
            }
        }
        Ok(AxisBox { lo, hi })
    }

    /// The same [lo, hi] interval in every one of `dim` dimensions.
    pub fn cube(lo: f64, hi: f64, dim: usize) -> Result<Self, BatchError> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lo.len()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&v, (&a, &b))| v >= a && v <= b)
    }

    /// Map uniform unit draws to a point in the box (one draw per dimension).
    pub fn point_from_unit(&self, unit: &[f64]) -> Vec<f64> {
        debug_assert_eq!(unit.len(), self.dim());
        unit.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&u, (&a, &b))| a + u * (b - a))
            .collect()
    }
}

/// Per-row bookkeeping common to both samplers.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMeta {
    /// Rejection: index of the proposal that produced this row.
    /// HMC: post-warmup iteration index within the chain.
    pub proposal_index: u64,
    /// Always 0 for rejection sampling.
    pub chain_id: u32,
    pub log_density: f64,
    /// Euclidean norm of the raw residual g(x).
    pub residual_norm: f64,
    /// Rejection rows are always accepted; for HMC this records whether the
    /// transition that yielded the row accepted its proposal.
    pub accepted: bool,
}

/// Outcome of projecting one row with the endgame.
#[derive(Debug, Clone, PartialEq)]
pub struct RowProjection {
    pub status: TrackStatus,
    /// |h(x*)| at the final point, h the system's sum of squares.
    pub residual: f64,
    pub t_reached: f64,
}

/// Per-chain HMC outcome, also carrying per-chain failures.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainStats {
    pub chain_id: u32,
    pub transitions: u64,
    pub accepted: u64,
    pub acceptance_rate: f64,
    /// Step size in force after warmup.
    pub step_size: f64,
    /// Gradient evaluations that needed the eigenvalue-clamped Gram solve.
    pub clamped_gram_evals: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProjectionCounts {
    pub converged: u64,
    pub stalled: u64,
}

/// Aggregate statistics for a batch. `proposed`/`accepted` count proposals
/// for rejection sampling and transitions for HMC.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchSummary {
    pub proposed: u64,
    pub accepted: u64,
    pub acceptance_rate: f64,
    /// Proposals rejected because the Gram matrix was numerically singular.
    pub rank_deficient: u64,
    pub chains: Vec<ChainStats>,
    pub projection: Option<ProjectionCounts>,
}

/// N points in R^n with parallel per-row metadata and an optional projection
/// annotation per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    names: Vec<String>,
    dim: usize,
    data: Vec<f64>,
    meta: Vec<RowMeta>,
    projection: Option<Vec<RowProjection>>,
    pub summary: BatchSummary,
}

impl SampleBatch {
    pub fn new(names: Vec<String>) -> Self {
        let dim = names.len();
        SampleBatch {
            names,
            dim,
            data: Vec::new(),
            meta: Vec::new(),
            projection: None,
            summary: BatchSummary::default(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn push_row(&mut self, point: &[f64], meta: RowMeta) {
        assert_eq!(point.len(), self.dim, "row dimension mismatch");
        assert!(self.projection.is_none(), "cannot append to a projected batch");
        self.data.extend_from_slice(point);
        self.meta.push(meta);
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn meta(&self, i: usize) -> &RowMeta {
        &self.meta[i]
    }

    pub fn metas(&self) -> &[RowMeta] {
        &self.meta
    }

    pub fn projection(&self) -> Option<&[RowProjection]> {
        self.projection.as_deref()
    }

    /// Replace each row's coordinates and attach its projection outcome.
    /// Row count and metadata are preserved.
    pub fn with_projection(
        &self,
        points: Vec<f64>,
        rows: Vec<RowProjection>,
    ) -> Result<SampleBatch, BatchError> {
        if points.len() != self.data.len() || rows.len() != self.meta.len() {
            return Err(BatchError::DimensionMismatch {
                expected: self.meta.len(),
                got: rows.len(),
            });
        }
        let counts = ProjectionCounts {
            converged: rows.iter().filter(|r| r.status == TrackStatus::Converged).count() as u64,
            stalled: rows.iter().filter(|r| r.status == TrackStatus::Stalled).count() as u64,
        };
        let mut summary = self.summary.clone();
        summary.projection = Some(counts);
        Ok(SampleBatch {
            names: self.names.clone(),
            dim: self.dim,
            data: points,
            meta: self.meta.clone(),
            projection: Some(rows),
            summary,
        })
    }

    /// Keep only the listed columns (in the given order), preserving all
    /// metadata and the summary. Used by marginalization.
    pub fn select_columns(&self, keep: &[usize]) -> Result<SampleBatch, BatchError> {
        for &c in keep {
            if c >= self.dim {
                return Err(BatchError::DimensionMismatch { expected: self.dim, got: c });
            }
        }
        let names = keep.iter().map(|&c| self.names[c].clone()).collect();
        let mut data = Vec::with_capacity(self.len() * keep.len());
        for row in self.rows().take(self.len()) {
            data.extend(keep.iter().map(|&c| row[c]));
        }
        Ok(SampleBatch {
            names,
            dim: keep.len(),
            data,
            meta: self.meta.clone(),
            projection: self.projection.clone(),
            summary: self.summary.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_validation() {
        assert!(AxisBox::new(vec![0.0], vec![1.0]).is_ok());
        assert!(AxisBox::new(vec![0.0], vec![0.0]).is_err());
        assert!(AxisBox::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(AxisBox::new(vec![f64::NEG_INFINITY], vec![0.0]).is_err());
        let b = AxisBox::cube(-1.5, 1.5, 2).unwrap();
        assert!(b.contains(&[1.5, -1.5]));
        assert!(!b.contains(&[1.6, 0.0]));
        assert!(!b.contains(&[0.0]));
    }

    #[test]
    fn batch_rows_roundtrip() {
        let mut batch = SampleBatch::new(vec!["x".into(), "y".into()]);
        let meta = RowMeta {
            proposal_index: 7,
            chain_id: 0,
            log_density: -1.0,
            residual_norm: 0.5,
            accepted: true,
        };
        batch.push_row(&[1.0, 2.0], meta.clone());
        batch.push_row(&[3.0, 4.0], meta);
        assert_eq!(batch.len(), 2);
        assert_eq!(batch.row(1), &[3.0, 4.0]);
        assert_eq!(batch.rows().count(), 2);

        let only_y = batch.select_columns(&[1]).unwrap();
        assert_eq!(only_y.names(), &["y".to_string()]);
        assert_eq!(only_y.row(0), &[2.0]);
        assert_eq!(only_y.len(), 2);
    }
}
