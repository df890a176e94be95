//! Volumetric value types shared by the whole pipeline.
//!
//! Volumes and masks store their voxels x-fastest: the flat index of voxel
//! `(x, y, z)` is `x + nx * (y + ny * z)`. When a volume is handed to the
//! network it becomes a `(1, 1, nz, ny, nx)` tensor, so tensor depth is
//! z, height is y and width is x.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nnengine::Tensor5;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum VolumeError {
    #[error("dimensions must be positive, got {0:?}")]
    EmptyDims([usize; 3]),
    #[error("spacing must be finite and strictly positive, got {0:?}")]
    BadSpacing([f64; 3]),
    #[error("buffer holds {actual} voxels but dims {dims:?} need {expected}")]
    BufferLength {
        dims: [usize; 3],
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value {value} at voxel {index}")]
    NonFinite { index: usize, value: f32 },
    #[error("scale must be finite and positive, got {0}")]
    BadScale(f32),
    #[error("geometry mismatch: {0:?} vs {1:?}")]
    GeometryMismatch(Box<Geometry>, Box<Geometry>),
    #[error("histogram needs at least one value")]
    EmptyHistogram,
    #[error("histogram needs upper > lower and at least 2 bins (lower {lower}, upper {upper}, bins {bins})")]
    BadHistogramRange { lower: f64, upper: f64, bins: usize },
}

/// Grid shape, voxel size (mm) and physical position of voxel `(0,0,0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self, VolumeError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(VolumeError::EmptyDims(dims));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(VolumeError::BadSpacing(spacing));
        }
        Ok(Self { dims, spacing, origin })
    }

    /// Unit spacing, zero origin.
    pub fn with_dims(dims: [usize; 3]) -> Result<Self, VolumeError> {
        Self::new(dims, [1.0; 3], [0.0; 3])
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    /// Physical position (mm) of a voxel center.
    pub fn to_physical(&self, x: f64, y: f64, z: f64) -> [f64; 3] {
        [
            self.origin[0] + x * self.spacing[0],
            self.origin[1] + y * self.spacing[1],
            self.origin[2] + z * self.spacing[2],
        ]
    }

    pub fn ensure_same(&self, other: &Geometry) -> Result<(), VolumeError> {
        if self == other {
            Ok(())
        } else {
            Err(VolumeError::GeometryMismatch(Box::new(*self), Box::new(*other)))
        }
    }
}

/// Scalar volume: CTA intensities, windowed intensities or probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    geometry: Geometry,
    data: Vec<f32>,
}

impl Volume3D {
    pub fn new(geometry: Geometry, data: Vec<f32>) -> Result<Self, VolumeError> {
        if data.len() != geometry.len() {
            return Err(VolumeError::BufferLength {
                dims: geometry.dims,
                expected: geometry.len(),
                actual: data.len(),
            });
        }
        Ok(Self { geometry, data })
    }

    pub fn filled(geometry: Geometry, value: f32) -> Self {
        Self {
            data: vec![value; geometry.len()],
            geometry,
        }
    }

    pub fn from_fn(geometry: Geometry, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let [nx, ny, nz] = geometry.dims;
        let mut data = Vec::with_capacity(geometry.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self { geometry, data }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.geometry.origin
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.geometry.index(x, y, z)]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            geometry: self.geometry,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Boolean segmentation on a volume grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask3D {
    geometry: Geometry,
    data: Vec<bool>,
}

// Geometry holds f64 fields, but masks are only ever compared structurally.
impl Eq for Geometry {}

impl BinaryMask3D {
    pub fn new(geometry: Geometry, data: Vec<bool>) -> Result<Self, VolumeError> {
        if data.len() != geometry.len() {
            return Err(VolumeError::BufferLength {
                dims: geometry.dims,
                expected: geometry.len(),
                actual: data.len(),
            });
        }
        Ok(Self { geometry, data })
    }

    pub fn empty(geometry: Geometry) -> Self {
        Self {
            data: vec![false; geometry.len()],
            geometry,
        }
    }

    pub fn full(geometry: Geometry) -> Self {
        Self {
            data: vec![true; geometry.len()],
            geometry,
        }
    }

    pub fn from_fn(geometry: Geometry, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let [nx, ny, nz] = geometry.dims;
        let mut data = Vec::with_capacity(geometry.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self { geometry, data }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.geometry.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.geometry.index(x, y, z);
        self.data[i] = value;
    }

    /// Inclusive voxel bounding box of the foreground, `None` when empty.
    pub fn bounding_box(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for (i, _) in self.data.iter().enumerate().filter(|(_, &b)| b) {
            let c = self.geometry.coords(i);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
            any = true;
        }
        any.then_some((lo, hi))
    }
}

pub fn foreground_count(mask: &BinaryMask3D) -> usize {
    mask.data.iter().filter(|&&b| b).count()
}

/// Voxel-count volume: foreground voxels times the voxel volume.
pub fn mask_volume_mm3(mask: &BinaryMask3D) -> f64 {
    foreground_count(mask) as f64 * mask.geometry.voxel_volume_mm3()
}

pub fn mask_to_tensor(mask: &BinaryMask3D) -> Tensor5 {
    let [nx, ny, nz] = mask.dims();
    let data = mask.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Tensor5::from_vec([1, 1, nz, ny, nx], data).expect("mask buffer matches its dims")
}

pub fn volume_to_tensor(vol: &Volume3D, scale: f32) -> Result<Tensor5, VolumeError> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(VolumeError::BadScale(scale));
    }
    let mut data = Vec::with_capacity(vol.data.len());
    for (index, &value) in vol.data.iter().enumerate() {
        if !value.is_finite() {
            return Err(VolumeError::NonFinite { index, value });
        }
        data.push(value / scale);
    }
    let [nx, ny, nz] = vol.dims();
    Ok(Tensor5::from_vec([1, 1, nz, ny, nx], data).expect("volume buffer matches its dims"))
}

/// Reads batch item `n`, channel `c` of a tensor back onto a volume grid.
pub fn tensor_to_volume(t: &Tensor5, n: usize, c: usize, geometry: Geometry) -> Result<Volume3D, VolumeError> {
    let [_, _, d, h, w] = t.shape();
    if [w, h, d] != geometry.dims {
        return Err(VolumeError::BufferLength {
            dims: geometry.dims,
            expected: geometry.len(),
            actual: w * h * d,
        });
    }
    Volume3D::new(geometry, t.channel(n, c).to_vec())
}

/// Acquisition stage of a scan: before or after stent-graft repair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pre,
    Post,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pre => "pre",
            Stage::Post => "post",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pre" => Ok(Stage::Pre),
            "post" => Ok(Stage::Post),
            other => Err(format!("unknown stage {other:?}, expected pre or post")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lower: f64,
    pub upper: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn bin_count(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_width(&self) -> f64 {
        (self.upper - self.lower) / self.counts.len() as f64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    #[inline]
    pub fn bin_of(&self, v: f64) -> usize {
        bin_index(v, self.lower, self.bin_width(), self.counts.len())
    }
}

#[inline]
fn bin_index(v: f64, lower: f64, width: f64, bins: usize) -> usize {
    let b = ((v - lower) / width).floor();
    if b.is_nan() || b < 0.0 {
        0
    } else {
        (b as usize).min(bins - 1)
    }
}

/// Fixed-range histogram; out-of-range values are clamped into the end bins.
pub fn histogram<I>(values: I, bin_count: usize, lower: f64, upper: f64) -> Result<Histogram, VolumeError>
where
    I: IntoIterator,
    I::Item: Into<f64>,
{
    if !(upper > lower) || bin_count < 2 {
        return Err(VolumeError::BadHistogramRange { lower, upper, bins: bin_count });
    }
    let width = (upper - lower) / bin_count as f64;
    let mut counts = vec![0u64; bin_count];
    let mut seen = false;
    for v in values {
        counts[bin_index(v.into(), lower, width, bin_count)] += 1;
        seen = true;
    }
    if !seen {
        return Err(VolumeError::EmptyHistogram);
    }
    Ok(Histogram { lower, upper, counts })
}
