//! The 3D HED segmentation network: architecture, weighted Dice loss,
//! training loop and inference.

pub mod config;
pub mod loss;
pub mod net;
pub mod train;

use thiserror::Error;

use crate::nnengine::EngineError;
use crate::volcore::VolumeError;

pub use config::Hed3DConfig;
pub use loss::weighted_dice_loss;
pub use net::{build, forward, parameter_layout, predict, ForwardTrace, Hed3DNet, NetOutput, INTENSITY_SCALE};
pub use train::{
    split_validation, train, train_with, EpochRecord, History, SampleSource, TrainConfig, TrainOutcome,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum NetError {
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("invalid training configuration: {0}")]
    TrainConfig(String),
    #[error("input shape {actual:?} does not match the network input {expected:?}")]
    InputShape { expected: [usize; 5], actual: [usize; 5] },
    #[error("volume dims {actual:?} do not match the network input {expected:?}")]
    VolumeDims { expected: [usize; 3], actual: [usize; 3] },
    #[error("parameter {name} has shape {actual:?}, expected {expected:?}")]
    ParameterShape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("target value {value} at element {index} is not 0 or 1")]
    Target { index: usize, value: f64 },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("sample source failed: {0}")]
    Source(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}
