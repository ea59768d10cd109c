//! Minimal differentiable numeric core.
//!
//! Forward ops record whatever the matching backward pass needs in small
//! cache structs; there is no general autodiff graph. The architecture is
//! a fixed stack of NormedLinear blocks, so an explicit per-op tape keeps
//! the code short and every gradient testable against finite differences.

mod mlp;
mod ops;
mod optim;
mod store;

pub use mlp::{FinalActivation, Mlp, MlpTape};
pub use ops::{
    dense_backward, dense_forward, layernorm_backward, layernorm_forward, mish_backward,
    mish_forward, simplicial_backward, simplicial_forward, softmax_backward, softmax_rows,
    LayerNormCache,
};
pub use optim::{adam_step, ema_update, AdamConfig};
pub use store::{ParamEntry, ParamStore};

/// LayerNorm epsilon used by every NormedLinear block.
pub const LAYERNORM_EPS: f64 = 1e-5;
