//! Minimal dense network engine: layer chains with analytic gradients,
//! Adam/RMSProp, and weight clipping.

mod kernels;
pub mod layer;
pub mod network;
pub mod optim;
pub mod params;

pub use layer::{ConvSpec, LayerSpec, NetworkSpec};
pub use network::{sigmoid, Mode, Network};
pub use optim::{Adam, LrSchedule, Optimizer, RmsProp};
pub use params::{Param, ParamStore};
