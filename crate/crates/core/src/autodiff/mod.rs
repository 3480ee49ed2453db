//! Reverse-mode differentiation over dense row-major arrays.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters live
//! in a [`ParamStore`] outside the tape; [`Tape::param`] copies a parameter
//! in as a leaf and remembers where it came from, so after
//! [`Tape::backward`] the store can pull the gradients back out.

mod array;
mod gradcheck;
mod params;
mod tape;

pub use array::DiffArray;
pub use gradcheck::{grad_check, GradCheck};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{BatchStats, CustomBackward, Tape, Var};
