//! Minimal dense-tensor engine: the layers the 3D HED network needs, with
//! hand-written backward passes, Adam, a plateau schedule and a
//! finite-difference gradient checker.
//!
//! There is no tape. Callers chain forward calls and then the matching
//! backward calls in reverse order.

pub mod conv;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod reference;
pub mod tensor;

use thiserror::Error;

pub use conv::{conv3d, conv3d_backward, conv_transpose3d, conv_transpose3d_backward, ConvGrads};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, GradOp};
pub use layers::{
    elementwise_add, elementwise_add_backward, maxpool3d, maxpool3d_backward, relu, relu_backward, sigmoid,
    sigmoid_backward, Pooled,
};
pub use optim::{adam_step, plateau_step, AdamConfig, Parameter, PlateauSchedule};
pub use tensor::{Scalar, Tensor, Tensor5};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EngineError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value in {what} at element {index}")]
    NonFinite { what: String, index: usize },
    #[error("non-finite gradient in parameter {param} at element {index}")]
    NonFiniteGradient { param: String, index: usize },
}
