//! The link-prediction network.
//!
//! ```text
//! [e_s ; e_r] ─┬─ dynamic layer (k gated sparse experts) ─┐
//!              └─ relation-aware layer (one sparse map/r) ─┴─ concat ─ projection ─ residual × D ─ · Eᵀ ─ σ
//! ```

mod config;
mod dsparse;
mod layers;
mod sparse;

pub use config::{fmt_real as config_fmt_real, Activation, DecoderKind, DropoutPlacement, DynamicBranch, ModelConfig};
pub use dsparse::{score_all, DSparsE, DynamicSlot, Forward};
pub use layers::{
    BnState, Decoder, DynamicLayer, Mode, RelationAwareLayer, ResidualBlock, WideDecoder, BN_EPS, BN_MOMENTUM,
};
pub use sparse::{init_sparse_linear, sample_mask, SparseLinear};
