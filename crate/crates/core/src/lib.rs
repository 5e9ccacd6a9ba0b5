//! Recovery of quantized latent factors from grid-structured density
//! discontinuities.
//!
//! The pipeline: generate latent samples whose joint density has
//! axis-aligned jumps forming a grid ([`synth`]), mix them through an
//! invertible map ([`synth::diffeo`]), learn a linear unmixing map that
//! aligns the high-magnitude log-density gradients with the coordinate
//! axes ([`criterion`], [`train`]), detect the jump locations in the
//! learned codes and match the recovered grid cells against the ground
//! truth up to axis permutation and order reversal ([`eval`]).
//!
//! [`grid`] holds the quantization operations and the grid-structure
//! data types; [`density`] the Gaussian kernel density machinery;
//! [`baselines`] PCA whitening, FastICA and a factorized-support
//! baseline for comparison.

pub mod baselines;
pub mod criterion;
pub mod density;
pub mod error;
pub mod eval;
pub mod grid;
pub(crate) mod linalg;
pub mod rng;
pub(crate) mod ser;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use grid::{CellIndex, DiscreteCoordination, SeparatorExtent, Thresholds};
pub use synth::{DiffeoSpec, GridSpec};
