//! Volumetric segmentation of abdominal aortic aneurysms with a 3D
//! holistically-nested network, from preprocessing to clinical metrics.

pub mod anmetrics;
pub mod gradsuite;
pub mod hed3d;
pub mod nnengine;
pub mod phantom;
pub mod postseg;
pub mod prep;
pub mod volcore;
pub mod volio;

pub use anmetrics::{evaluate_case, MetricsReport, ReportRow};
pub use hed3d::{Hed3DConfig, Hed3DNet, NetError, TrainConfig};
pub use nnengine::{EngineError, Tensor, Tensor5};
pub use phantom::PhantomSpec;
pub use volcore::{BinaryMask3D, Geometry, Stage, Volume3D, VolumeError};
pub use volio::IoError;
