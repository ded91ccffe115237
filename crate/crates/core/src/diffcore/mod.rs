//! Minimal differentiable compute core: the ops the two networks need,
//! with reverse-mode gradients.

pub mod container;
pub mod gradcheck;
pub mod optim;
pub mod params;
mod real;
pub mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, Objective};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{he_uniform, ParamId, ParamSet, Parameter};
pub use real::Real;
pub use tape::{softmax_in_place, Activation, Gradients, Tape, Var, CE_EPSILON};
pub(crate) use tensor::check_axis as tensor_check_axis;
pub use tensor::Tensor;
