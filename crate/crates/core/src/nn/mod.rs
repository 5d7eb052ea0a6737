//! Minimal sequential neural-network substrate.

mod activation;
mod fd;
mod gemm;
mod grads;
mod layer;
mod loss;
mod network;
mod prune;
pub mod snapshot;

pub use activation::{Activation, DEFAULT_LEAKY_SLOPE, DEFAULT_SWISH_BETA};
pub use fd::{fd_gradient_oracle, loss_value, FD_STEP};
pub use grads::GradientSet;
pub use layer::{BatchNorm, Conv2d, Dense, Layer, LayerSpec, BN_EPS, BN_MOMENTUM};
pub use loss::{argmax_rows, Loss, Target};
pub use network::{mlp, BnCache, ForwardTrace, Mode, Network, NetworkBuilder, UnitProbe};
pub use prune::{apply_removal, params_per_unit, removal_plan, remove_units, RemovalOp};
