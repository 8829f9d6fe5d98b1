//! Dense-network engine with exact analytic gradients.
//!
//! Every encoder and classifier in the simulator is a [`DenseNet`]: a stack of
//! affine layers with relu or identity activations, computed in `f64`.
//! Gradients are returned explicitly and never cross a network boundary on
//! their own — `backward` hands back the input gradient so the caller decides
//! whether a fused, frozen embedding receives updates (it never does).

mod net;
mod optimizer;
mod params;

pub use net::{Activation, DenseNet, GradientSet, LayerGradients};
pub use optimizer::{Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
