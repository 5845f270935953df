//! Sampling and projection machinery for real algebraic varieties.
//!
//! A variety is the zero set of a polynomial system g: R^n -> R^m. This crate
//! represents such systems symbolically ([`poly`]), builds fuzzy densities
//! concentrated on the variety ([`density`]), draws from them by rejection
//! ([`rejection`]) or Hamiltonian Monte Carlo ([`hmc`]), converts inequality
//! descriptions to equality systems ([`semialg`]), and moves near-variety
//! points exactly onto the variety with a homotopy endgame ([`endgame`]).
//! [`catalog`] holds the named example systems used throughout the tests and
//! the CLI.

pub mod batch;
pub mod catalog;
pub mod density;
pub mod endgame;
pub mod hmc;
pub mod poly;
pub mod rejection;
pub mod semialg;

pub use batch::{AxisBox, ChainStats, RowMeta, RowProjection, SampleBatch};
pub use density::{BaseDistribution, DensityError, DensityKind, DensityModel};
pub use endgame::{ProjectionResult, TrackControls, TrackStatus};
pub use poly::{PolyError, PolySystem, Polynomial, VarContext};
