//! Sparse dynamic-expert link prediction for knowledge graphs.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: a small reverse-mode tape over dense row-major arrays.
//! - [`kg`]: triple ingestion, vocabularies, the filtered truth index,
//!   1-N batching and a synthetic modular-arithmetic graph.
//! - [`model`]: masked sparse affine layers, the gated expert encoder,
//!   the per-relation layer, the residual decoder and all-entity scoring.
//! - [`train`]: Adam, label smoothing, the training loop, repeated runs
//!   and checkpoints.
//! - [`eval`]: filtered ranking, MRR and Hits@N.
//! - [`ablation`]: grid sweeps over the architecture switches.
//!
//! Heavy inner loops live in [`kernels`], which has a rayon-backed path
//! (feature `parallel`, on by default) and a sequential path. Both compute
//! every output element with the same summation order, so results are
//! bitwise identical whichever path runs.

pub mod ablation;
pub mod autodiff;
mod error;
pub mod eval;
pub mod kernels;
pub mod kg;
pub mod model;
pub mod train;

pub use error::{Error, Result};

/// Floating point type used for all parameters and activations.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
/// Floating point type used for all parameters and activations.
#[cfg(feature = "f32")]
pub type Real = f32;

/// Name of the active precision, as written into configs and checkpoints.
pub const PRECISION: &str = if cfg!(feature = "f32") { "f32" } else { "f64" };
