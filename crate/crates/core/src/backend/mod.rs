//! Tensors, differentiable operators and the gradient-check harness.

pub mod gradcheck;
pub mod ops;
mod tape;
mod tensor;

pub use gradcheck::{gradient_check, gradient_check_shapes, GradCheckReport};
pub use ops::UpsampleMode;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{FeatureMap, Scalar, Tensor};
