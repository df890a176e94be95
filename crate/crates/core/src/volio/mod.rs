//! File formats: MetaImage volumes and masks, network checkpoints, metric
//! report CSVs.

pub mod checkpoint;
pub mod metaimage;
pub mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::hed3d::NetError;
use crate::volcore::VolumeError;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use metaimage::{
    read_mask, read_metaimage, read_volume, write_mask, write_volume, DataFile, ElementType, MetaImageHeader,
};
pub use report::{format_report, mean_std, parse_report, write_report, ReportRecord, REPORT_COLUMNS};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: missing header key {key}", path.display())]
    MissingKey { path: PathBuf, key: &'static str },
    #[error("{}: bad value for {key}: {value:?}", path.display())]
    BadHeaderValue { path: PathBuf, key: String, value: String },
    #[error("{}: unsupported ElementType {element_type}", path.display())]
    UnsupportedElementType { path: PathBuf, element_type: String },
    #[error("{}: NDims = {ndims}, only 3-D images are supported", path.display())]
    UnsupportedDims { path: PathBuf, ndims: usize },
    #[error("{}: payload truncated, ElementDataFile needs {expected} bytes, found {actual}", path.display())]
    Truncated { path: PathBuf, expected: usize, actual: usize },
    #[error("{}: payload has {actual} bytes, expected {expected}", path.display())]
    ExcessData { path: PathBuf, expected: usize, actual: usize },
    #[error("{}: ElementDataFile {} not found", path.display(), data_file.display())]
    MissingDataFile { path: PathBuf, data_file: PathBuf },
    #[error("value {value} at voxel {index} cannot be stored as {element_type}")]
    NotRepresentable {
        index: usize,
        value: f32,
        element_type: &'static str,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint tensor {0} appears more than once")]
    DuplicateTensor(String),
    #[error("malformed report: {0}")]
    Report(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}
