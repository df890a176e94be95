//! Preprocessing (ROI crop, window/level, resampling) and training-time
//! augmentation (random crops that contain the aneurysm, axial rotations and
//! translations).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hed3d::{NetError, SampleSource, INTENSITY_SCALE};
use crate::nnengine::Tensor5;
use crate::volcore::{mask_to_tensor, volume_to_tensor, BinaryMask3D, Geometry, Volume3D, VolumeError};

pub const DEFAULT_WINDOW_CENTER: f64 = 150.0;
pub const DEFAULT_WINDOW_WIDTH: f64 = 500.0;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PrepError {
    #[error("ROI {min:?}..={max:?} does not fit volume dims {dims:?}")]
    BadRoi {
        min: [usize; 3],
        max: [usize; 3],
        dims: [usize; 3],
    },
    #[error("window width must be positive, got {0}")]
    BadWindow(f64),
    #[error("target dims must be positive, got {0:?}")]
    BadTargetDims([usize; 3]),
    #[error("aneurysm bounding box {bbox:?} does not fit crop {crop:?}")]
    CropTooSmall { bbox: [usize; 3], crop: [usize; 3] },
    #[error("crop {crop:?} exceeds volume dims {dims:?}")]
    CropTooLarge { crop: [usize; 3], dims: [usize; 3] },
    #[error("mask has no foreground to crop around")]
    EmptyMask,
    #[error("invalid augmentation plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Inclusive voxel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiBounds {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl RoiBounds {
    pub fn full(dims: [usize; 3]) -> Self {
        Self {
            min: [0; 3],
            max: [dims[0] - 1, dims[1] - 1, dims[2] - 1],
        }
    }

    pub fn extent(&self) -> [usize; 3] {
        [
            self.max[0] - self.min[0] + 1,
            self.max[1] - self.min[1] + 1,
            self.max[2] - self.min[2] + 1,
        ]
    }

    pub fn check(&self, dims: [usize; 3]) -> Result<(), PrepError> {
        if (0..3).any(|a| self.min[a] > self.max[a] || self.max[a] >= dims[a]) {
            return Err(PrepError::BadRoi {
                min: self.min,
                max: self.max,
                dims,
            });
        }
        Ok(())
    }

    fn geometry(&self, g: &Geometry) -> Result<Geometry, VolumeError> {
        let origin = g.to_physical(self.min[0] as f64, self.min[1] as f64, self.min[2] as f64);
        Geometry::new(self.extent(), g.spacing, origin)
    }
}

pub fn crop_roi(vol: &Volume3D, bounds: RoiBounds) -> Result<Volume3D, PrepError> {
    bounds.check(vol.dims())?;
    let g = bounds.geometry(vol.geometry())?;
    let [x0, y0, z0] = bounds.min;
    Ok(Volume3D::from_fn(g, |x, y, z| vol.get(x + x0, y + y0, z + z0)))
}

pub fn crop_mask(mask: &BinaryMask3D, bounds: RoiBounds) -> Result<BinaryMask3D, PrepError> {
    bounds.check(mask.dims())?;
    let g = bounds.geometry(mask.geometry())?;
    let [x0, y0, z0] = bounds.min;
    Ok(BinaryMask3D::from_fn(g, |x, y, z| mask.get(x + x0, y + y0, z + z0)))
}

/// Clamps to `[center - width/2, center + width/2]` and maps that linearly
/// onto `[0, 255]`.
pub fn window_level(vol: &Volume3D, center: f64, width: f64) -> Result<Volume3D, PrepError> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(PrepError::BadWindow(width));
    }
    let lo = center - width / 2.0;
    Ok(vol.map(|v| {
        let t = ((v as f64 - lo) / width).clamp(0.0, 1.0);
        (255.0 * t) as f32
    }))
}

/// Source coordinate of destination voxel `i` when `n_src` voxels become
/// `n_dst` over the same physical extent.
fn source_coord(i: usize, n_src: usize, n_dst: usize) -> f64 {
    (i as f64 + 0.5) * (n_src as f64 / n_dst as f64) - 0.5
}

fn resampled_geometry(g: &Geometry, target: [usize; 3]) -> Result<Geometry, PrepError> {
    if target.iter().any(|&d| d == 0) {
        return Err(PrepError::BadTargetDims(target));
    }
    let mut spacing = [0.0; 3];
    let mut origin = [0.0; 3];
    for a in 0..3 {
        let ratio = g.dims[a] as f64 / target[a] as f64;
        spacing[a] = g.spacing[a] * ratio;
        origin[a] = g.origin[a] + source_coord(0, g.dims[a], target[a]) * g.spacing[a];
    }
    if target == g.dims {
        return Ok(*g);
    }
    Ok(Geometry::new(target, spacing, origin)?)
}

/// Linear interpolation weights along one axis with edge clamping.
fn axis_taps(n_src: usize, n_dst: usize) -> Vec<(usize, usize, f64)> {
    (0..n_dst)
        .map(|i| {
            let s = source_coord(i, n_src, n_dst).clamp(0.0, (n_src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n_src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Trilinear resampling that preserves physical extent.
pub fn resample_trilinear(vol: &Volume3D, target: [usize; 3]) -> Result<Volume3D, PrepError> {
    let g = resampled_geometry(vol.geometry(), target)?;
    let [sx, sy, sz] = vol.dims();
    let (tx, ty, tz) = (axis_taps(sx, target[0]), axis_taps(sy, target[1]), axis_taps(sz, target[2]));
    Ok(Volume3D::from_fn(g, |x, y, z| {
        let (x0, x1, fx) = tx[x];
        let (y0, y1, fy) = ty[y];
        let (z0, z1, fz) = tz[z];
        let v = |a, b, c| vol.get(a, b, c) as f64;
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let c00 = lerp(v(x0, y0, z0), v(x1, y0, z0), fx);
        let c10 = lerp(v(x0, y1, z0), v(x1, y1, z0), fx);
        let c01 = lerp(v(x0, y0, z1), v(x1, y0, z1), fx);
        let c11 = lerp(v(x0, y1, z1), v(x1, y1, z1), fx);
        lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz) as f32
    }))
}

/// Nearest-neighbour companion of [`resample_trilinear`] for masks.
pub fn resample_nearest(mask: &BinaryMask3D, target: [usize; 3]) -> Result<BinaryMask3D, PrepError> {
    let g = resampled_geometry(mask.geometry(), target)?;
    let d = mask.dims();
    let pick = |i: usize, a: usize| (source_coord(i, d[a], target[a]).round().max(0.0) as usize).min(d[a] - 1);
    Ok(BinaryMask3D::from_fn(g, |x, y, z| mask.get(pick(x, 0), pick(y, 1), pick(z, 2))))
}

/// A crop of `crop_dims` containing the whole mask bounding box, placed
/// uniformly over all feasible offsets.
pub fn random_crop_containing<R: Rng + ?Sized>(
    vol: &Volume3D,
    mask: &BinaryMask3D,
    crop_dims: [usize; 3],
    rng: &mut R,
) -> Result<(Volume3D, BinaryMask3D), PrepError> {
    vol.geometry().ensure_same(mask.geometry())?;
    let dims = vol.dims();
    if (0..3).any(|a| crop_dims[a] == 0 || crop_dims[a] > dims[a]) {
        return Err(PrepError::CropTooLarge { crop: crop_dims, dims });
    }
    let (lo, hi) = mask.bounding_box().ok_or(PrepError::EmptyMask)?;
    let bbox = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
    if (0..3).any(|a| bbox[a] > crop_dims[a]) {
        return Err(PrepError::CropTooSmall { bbox, crop: crop_dims });
    }
    let mut min = [0; 3];
    for a in 0..3 {
        let first = (hi[a] + 1).saturating_sub(crop_dims[a]);
        let last = lo[a].min(dims[a] - crop_dims[a]);
        min[a] = rng.gen_range(first..=last);
    }
    let b = RoiBounds {
        min,
        max: [min[0] + crop_dims[0] - 1, min[1] + crop_dims[1] - 1, min[2] + crop_dims[2] - 1],
    };
    Ok((crop_roi(vol, b)?, crop_mask(mask, b)?))
}

/// Rotation about the axial (z) axis through the volume center, then a
/// translation in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub angle_deg: f64,
    pub translation: [f64; 3],
}

impl RigidTransform {
    pub const IDENTITY: Self = Self {
        angle_deg: 0.0,
        translation: [0.0; 3],
    };

    pub fn is_identity(&self) -> bool {
        self.angle_deg == 0.0 && self.translation == [0.0; 3]
    }

    /// Source voxel coordinates of output voxel `(x, y, z)`.
    fn source(&self, g: &Geometry, x: usize, y: usize, z: usize) -> [f64; 3] {
        let [sx, sy, _] = g.spacing;
        let cx = (g.dims[0] as f64 - 1.0) / 2.0 * sx;
        let cy = (g.dims[1] as f64 - 1.0) / 2.0 * sy;
        let px = (x as f64 - self.translation[0]) * sx - cx;
        let py = (y as f64 - self.translation[1]) * sy - cy;
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        // inverse rotation
        let qx = c * px + s * py + cx;
        let qy = -s * px + c * py + cy;
        [qx / sx, qy / sy, z as f64 - self.translation[2]]
    }
}

const EDGE_TOL: f64 = 1e-9;

fn trilinear_zero_fill(vol: &Volume3D, p: [f64; 3]) -> f32 {
    let d = vol.dims();
    let mut idx = [(0usize, 0usize, 0.0f64); 3];
    for a in 0..3 {
        let hi = (d[a] - 1) as f64;
        if p[a] < -EDGE_TOL || p[a] > hi + EDGE_TOL {
            return 0.0;
        }
        let s = p[a].clamp(0.0, hi);
        let i0 = s.floor() as usize;
        idx[a] = (i0, (i0 + 1).min(d[a] - 1), s - i0 as f64);
    }
    let [(x0, x1, fx), (y0, y1, fy), (z0, z1, fz)] = idx;
    let v = |a, b, c| vol.get(a, b, c) as f64;
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let c00 = lerp(v(x0, y0, z0), v(x1, y0, z0), fx);
    let c10 = lerp(v(x0, y1, z0), v(x1, y1, z0), fx);
    let c01 = lerp(v(x0, y0, z1), v(x1, y0, z1), fx);
    let c11 = lerp(v(x0, y1, z1), v(x1, y1, z1), fx);
    lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz) as f32
}

fn nearest_or_false(mask: &BinaryMask3D, p: [f64; 3]) -> bool {
    let d = mask.dims();
    let mut q = [0usize; 3];
    for a in 0..3 {
        let r = p[a].round();
        if r < 0.0 || r > (d[a] - 1) as f64 {
            return false;
        }
        q[a] = r as usize;
    }
    mask.get(q[0], q[1], q[2])
}

/// Image by trilinear interpolation, mask by nearest neighbour; voxels
/// mapped from outside the field of view become 0 / background.
pub fn apply_rigid(
    vol: &Volume3D,
    mask: &BinaryMask3D,
    t: &RigidTransform,
) -> Result<(Volume3D, BinaryMask3D), PrepError> {
    vol.geometry().ensure_same(mask.geometry())?;
    if t.is_identity() {
        return Ok((vol.clone(), mask.clone()));
    }
    let g = *vol.geometry();
    let out = Volume3D::from_fn(g, |x, y, z| trilinear_zero_fill(vol, t.source(&g, x, y, z)));
    let m = BinaryMask3D::from_fn(g, |x, y, z| nearest_or_false(mask, t.source(&g, x, y, z)));
    Ok((out, m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub crops_per_scan: usize,
    /// Includes the identity, which comes first.
    pub transforms_per_crop: usize,
    pub rotation_deg: f64,
    pub translation_vox: f64,
    /// `None` keeps the full volume, making every crop the identity crop.
    pub crop_dims: Option<[usize; 3]>,
    pub seed: u64,
}

impl Default for AugmentPlan {
    fn default() -> Self {
        Self {
            crops_per_scan: 4,
            transforms_per_crop: 35,
            rotation_deg: 10.0,
            translation_vox: 10.0,
            crop_dims: None,
            seed: 0,
        }
    }
}

impl AugmentPlan {
    pub fn outputs_per_scan(&self) -> usize {
        self.crops_per_scan * self.transforms_per_crop
    }

    pub fn validate(&self) -> Result<(), PrepError> {
        if self.crops_per_scan == 0 || self.transforms_per_crop == 0 {
            return Err(PrepError::Plan("crops and transforms per crop must be at least 1".into()));
        }
        if !(self.rotation_deg >= 0.0 && self.translation_vox >= 0.0) {
            return Err(PrepError::Plan("rotation and translation ranges must be >= 0".into()));
        }
        if self.crops_per_scan >= 1 << 20 || self.transforms_per_crop >= 1 << 20 {
            return Err(PrepError::Plan("too many crops or transforms".into()));
        }
        Ok(())
    }

    /// Independent stream per (scan, crop, transform), so the order in which
    /// items are produced never changes them.
    fn rng(&self, scan: usize, crop: usize, transform: Option<usize>) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        let t = transform.map_or(0, |t| t as u64 + 1);
        r.set_stream(((scan as u64) << 42) | ((crop as u64) << 21) | t);
        r
    }

    pub fn transform(&self, scan: usize, crop: usize, index: usize) -> RigidTransform {
        if index == 0 {
            return RigidTransform::IDENTITY;
        }
        let mut r = self.rng(scan, crop, Some(index));
        let mut sym = |m: f64| if m > 0.0 { r.gen_range(-m..=m) } else { 0.0 };
        let angle_deg = sym(self.rotation_deg);
        let translation = [sym(self.translation_vox), sym(self.translation_vox), 0.0];
        RigidTransform { angle_deg, translation }
    }

    /// Output `index` (crop-major) for scan `scan`.
    pub fn sample(
        &self,
        vol: &Volume3D,
        mask: &BinaryMask3D,
        scan: usize,
        index: usize,
    ) -> Result<(Volume3D, BinaryMask3D), PrepError> {
        let (crop, t) = (index / self.transforms_per_crop, index % self.transforms_per_crop);
        let (v, m) = match self.crop_dims {
            Some(dims) => random_crop_containing(vol, mask, dims, &mut self.rng(scan, crop, None))?,
            None => (vol.clone(), mask.clone()),
        };
        apply_rigid(&v, &m, &self.transform(scan, crop, t))
    }
}

/// Every augmented pair of one scan, crop-major.
pub fn build_augmented_set(
    vol: &Volume3D,
    mask: &BinaryMask3D,
    plan: &AugmentPlan,
) -> Result<Vec<(Volume3D, BinaryMask3D)>, PrepError> {
    plan.validate()?;
    (0..plan.outputs_per_scan()).map(|i| plan.sample(vol, mask, 0, i)).collect()
}

/// Windowed scans whose augmented variants are produced on demand.
#[derive(Debug, Clone)]
pub struct AugmentedDataset {
    scans: Vec<(Volume3D, BinaryMask3D)>,
    plan: AugmentPlan,
}

impl AugmentedDataset {
    pub fn new(scans: Vec<(Volume3D, BinaryMask3D)>, plan: AugmentPlan) -> Result<Self, PrepError> {
        plan.validate()?;
        for (v, m) in &scans {
            v.geometry().ensure_same(m.geometry())?;
        }
        Ok(Self { scans, plan })
    }

    pub fn plan(&self) -> &AugmentPlan {
        &self.plan
    }

    pub fn pair(&self, index: usize) -> Result<(Volume3D, BinaryMask3D), PrepError> {
        let per = self.plan.outputs_per_scan();
        let (v, m) = &self.scans[index / per];
        self.plan.sample(v, m, index / per, index % per)
    }
}

/// Network input pair for a windowed volume and its mask.
pub fn to_sample(vol: &Volume3D, mask: &BinaryMask3D) -> Result<(Tensor5, Tensor5), VolumeError> {
    Ok((volume_to_tensor(vol, INTENSITY_SCALE)?, mask_to_tensor(mask)))
}

impl SampleSource for AugmentedDataset {
    fn len(&self) -> usize {
        self.scans.len() * self.plan.outputs_per_scan()
    }

    fn sample(&self, index: usize) -> Result<(Tensor5, Tensor5), NetError> {
        let (v, m) = self.pair(index).map_err(|e| NetError::Source(e.to_string()))?;
        Ok(to_sample(&v, &m)?)
    }
}
