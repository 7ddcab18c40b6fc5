//! Minimal differentiable model kernel: dense/activation stacks, losses,
//! analytic gradients and optimizers, all in `f64`.

mod batch;
mod loss;
mod model;
mod optim;
mod param;

pub use batch::{Batch, Matrix, Targets};
pub use loss::{loss, loss_and_grad, LossKind, DICE_EPS};
pub use model::{forward, grad, Activation, LayerDescriptor, LayerKind, ModelSpec};
pub use optim::{opt_step, OptState, OptimizerConfig, OptimizerKind};
pub(crate) use param::Reader;
pub use param::{LayerSegment, Layout, ParamVector};
