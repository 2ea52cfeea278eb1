//! Layers, the skip-connected sequential network, and its optimizer.

mod layer;
mod network;
mod optim;

pub use layer::{Layer, LayerKind, ParamGrads};
pub use network::{ActivationCache, Mode, Network};
pub use optim::{optimizer_step, AdamConfig, OptimizerState};
