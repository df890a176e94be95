//! Overlap and clinical metrics: Dice, Jaccard, maximum axial diameter,
//! volume difference, and the Mann–Whitney U test.

pub mod mannwhitney;
pub mod mec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volcore::{foreground_count, mask_volume_mm3, BinaryMask3D, Stage, VolumeError};

pub use mannwhitney::{mann_whitney_u, MannWhitney};
pub use mec::{minimum_enclosing_circle, Circle};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricError {
    #[error("minimum enclosing circle of an empty point set")]
    EmptyPointSet,
    #[error("Mann-Whitney test needs two non-empty samples")]
    EmptySample,
    #[error("Mann-Whitney samples must be finite")]
    NonFiniteSample,
    #[error("ground-truth volume of case {0} is zero")]
    ZeroReferenceVolume(usize),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

fn overlap(a: &BinaryMask3D, b: &BinaryMask3D) -> Result<(usize, usize, usize), MetricError> {
    a.geometry().ensure_same(b.geometry())?;
    let inter = a.data().iter().zip(b.data()).filter(|(&x, &y)| x && y).count();
    Ok((inter, foreground_count(a), foreground_count(b)))
}

/// `2 |a ∩ b| / (|a| + |b|)`; two empty masks agree perfectly (1.0).
pub fn dice(a: &BinaryMask3D, b: &BinaryMask3D) -> Result<f64, MetricError> {
    let (i, na, nb) = overlap(a, b)?;
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * i as f64 / (na + nb) as f64)
}

/// `|a ∩ b| / |a ∪ b|`; two empty masks agree perfectly (1.0).
pub fn jaccard(a: &BinaryMask3D, b: &BinaryMask3D) -> Result<f64, MetricError> {
    let (i, na, nb) = overlap(a, b)?;
    let union = na + nb - i;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(i as f64 / union as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiameterResult {
    pub max_diameter_mm: f64,
    /// Axial slice attaining the maximum; `None` for an empty mask.
    pub slice_index: Option<usize>,
    /// Diameter of every axial slice, 0 where the slice is empty.
    pub profile_mm: Vec<f64>,
}

/// Largest per-slice minimum-enclosing-circle diameter over axial slices.
///
/// Voxel centers are placed at `(x * sx, y * sy)` mm. Only in-plane boundary
/// voxels are passed to the circle fit; interior voxels cannot lie on the
/// enclosing circle.
pub fn max_axial_diameter(mask: &BinaryMask3D) -> DiameterResult {
    let [nx, ny, nz] = mask.dims();
    let [sx, sy, _] = mask.spacing();
    let m = mask.data();
    let mut profile = vec![0.0; nz];
    let mut best: Option<(f64, usize)> = None;
    let mut pts = Vec::new();
    for (z, slot) in profile.iter_mut().enumerate() {
        pts.clear();
        let at = |x: usize, y: usize| m[x + nx * (y + ny * z)];
        for y in 0..ny {
            for x in 0..nx {
                if !at(x, y) {
                    continue;
                }
                let interior = x > 0 && y > 0 && x + 1 < nx && y + 1 < ny
                    && at(x - 1, y) && at(x + 1, y) && at(x, y - 1) && at(x, y + 1);
                if !interior {
                    pts.push([x as f64 * sx, y as f64 * sy]);
                }
            }
        }
        if pts.is_empty() {
            continue;
        }
        let d = 2.0 * minimum_enclosing_circle(&pts).expect("non-empty").radius;
        *slot = d;
        if best.map_or(true, |(b, _)| d > b) {
            best = Some((d, z));
        }
    }
    DiameterResult {
        max_diameter_mm: best.map_or(0.0, |b| b.0),
        slice_index: best.map(|b| b.1),
        profile_mm: profile,
    }
}

/// Per-case `|V_pred - V_true| / V_true` and their mean.
pub fn relative_volume_difference(cases: &[(f64, f64)]) -> Result<(f64, Vec<f64>), MetricError> {
    let mut per = Vec::with_capacity(cases.len());
    for (i, &(pred, truth)) in cases.iter().enumerate() {
        if truth <= 0.0 {
            return Err(MetricError::ZeroReferenceVolume(i));
        }
        per.push((pred - truth).abs() / truth);
    }
    let mean = if per.is_empty() {
        0.0
    } else {
        per.iter().sum::<f64>() / per.len() as f64
    };
    Ok((mean, per))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dice: f64,
    pub jaccard: f64,
    pub diameter: DiameterResult,
    pub gt_diameter: DiameterResult,
    pub diameter_abs_err_mm: f64,
    /// `|z_pred - z_gt|`; `None` when either mask is empty.
    pub slice_deviation: Option<usize>,
    pub volume_mm3: f64,
    pub gt_volume_mm3: f64,
    /// `None` when the ground truth is empty.
    pub rel_vol_diff: Option<f64>,
    /// Both masks empty, so Dice and Jaccard hold the 1.0 convention.
    pub both_empty: bool,
}

pub fn evaluate_case(pred: &BinaryMask3D, gt: &BinaryMask3D) -> Result<MetricsReport, MetricError> {
    let d = dice(pred, gt)?;
    let j = jaccard(pred, gt)?;
    let diameter = max_axial_diameter(pred);
    let gt_diameter = max_axial_diameter(gt);
    let volume = mask_volume_mm3(pred);
    let gt_volume = mask_volume_mm3(gt);
    let slice_deviation = match (diameter.slice_index, gt_diameter.slice_index) {
        (Some(a), Some(b)) => Some(a.abs_diff(b)),
        _ => None,
    };
    Ok(MetricsReport {
        dice: d,
        jaccard: j,
        diameter_abs_err_mm: (diameter.max_diameter_mm - gt_diameter.max_diameter_mm).abs(),
        diameter,
        gt_diameter,
        slice_deviation,
        volume_mm3: volume,
        gt_volume_mm3: gt_volume,
        rel_vol_diff: (gt_volume > 0.0).then(|| (volume - gt_volume).abs() / gt_volume),
        both_empty: foreground_count(pred) == 0 && foreground_count(gt) == 0,
    })
}

/// One line of a metrics report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub case_id: String,
    pub stage: Stage,
    pub metrics: MetricsReport,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volcore::Geometry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn masks_4x4() -> (BinaryMask3D, BinaryMask3D) {
        let g = Geometry::with_dims([4, 4, 1]).unwrap();
        // a: 4 voxels in row 0; b: 3 of those plus 3 in row 1
        let a = BinaryMask3D::from_fn(g, |_, y, _| y == 0);
        let b = BinaryMask3D::from_fn(g, |x, y, _| (y == 0 && x < 3) || (y == 1 && x < 3));
        (a, b)
    }

    #[test]
    fn hand_counted_overlap() {
        let (a, b) = masks_4x4();
        assert_eq!(foreground_count(&a), 4);
        assert_eq!(foreground_count(&b), 6);
        assert!((dice(&a, &b).unwrap() - 0.6).abs() < 1e-15);
        assert!((jaccard(&a, &b).unwrap() - 3.0 / 7.0).abs() < 1e-15);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let c = BinaryMask3D::from_fn(*a.geometry(), |_, y, _| y == 3);
        assert_eq!(dice(&a, &c).unwrap(), 0.0);
        let e = BinaryMask3D::empty(*a.geometry());
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert_eq!(jaccard(&e, &e).unwrap(), 1.0);
        let other = BinaryMask3D::empty(Geometry::with_dims([4, 4, 2]).unwrap());
        assert!(dice(&a, &other).is_err());
    }

    #[test]
    fn dice_jaccard_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Geometry::with_dims([6, 5, 4]).unwrap();
        for _ in 0..50 {
            let pa = rng.gen_range(0.0..0.6);
            let pb = rng.gen_range(0.0..0.6);
            let a = BinaryMask3D::from_fn(g, |_, _, _| rng.gen_bool(pa));
            let b = BinaryMask3D::from_fn(g, |_, _, _| rng.gen_bool(pb));
            let d = dice(&a, &b).unwrap();
            let j = jaccard(&a, &b).unwrap();
            assert!((d - 2.0 * j / (1.0 + j)).abs() < 1e-12);
            assert!(j <= d && d <= 1.0);
            assert_eq!(d, dice(&b, &a).unwrap());
        }
    }

    #[test]
    fn diameters() {
        let g = Geometry::new([5, 5, 3], [0.8, 0.8, 0.625], [0.0; 3]).unwrap();
        let mut m = BinaryMask3D::empty(g);
        m.set(2, 2, 1, true);
        let r = max_axial_diameter(&m);
        assert_eq!((r.max_diameter_mm, r.slice_index), (0.0, Some(1)));

        let g = Geometry::with_dims([12, 3, 2]).unwrap();
        let line = BinaryMask3D::from_fn(g, |x, y, z| z == 1 && y == 1 && x < 10);
        let r = max_axial_diameter(&line);
        assert!((r.max_diameter_mm - 9.0).abs() < 1e-12);
        assert_eq!(r.slice_index, Some(1));
        assert_eq!(r.profile_mm[0], 0.0);

        let g = Geometry::with_dims([25, 25, 1]).unwrap();
        let disc = BinaryMask3D::from_fn(g, |x, y, _| {
            let (dx, dy) = (x as f64 - 12.0, y as f64 - 12.0);
            dx * dx + dy * dy <= 100.0
        });
        let r = max_axial_diameter(&disc);
        assert!((r.max_diameter_mm - 20.0).abs() <= 1.0, "{}", r.max_diameter_mm);

        let e = max_axial_diameter(&BinaryMask3D::empty(g));
        assert_eq!((e.max_diameter_mm, e.slice_index), (0.0, None));
    }

    #[test]
    fn boundary_subset_gives_same_circle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = Geometry::new([9, 9, 4], [0.7, 0.7, 1.0], [0.0; 3]).unwrap();
        for _ in 0..20 {
            let m = BinaryMask3D::from_fn(g, |_, _, _| rng.gen_bool(0.6));
            let r = max_axial_diameter(&m);
            for z in 0..4 {
                let pts: Vec<[f64; 2]> = (0..81)
                    .filter(|i| m.get(i % 9, i / 9, z))
                    .map(|i| [(i % 9) as f64 * 0.7, (i / 9) as f64 * 0.7])
                    .collect();
                let full = if pts.is_empty() {
                    0.0
                } else {
                    2.0 * minimum_enclosing_circle(&pts).unwrap().radius
                };
                assert!((full - r.profile_mm[z]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn volume_differences() {
        let (m, per) = relative_volume_difference(&[(110.0, 100.0), (95.0, 100.0)]).unwrap();
        assert!((m - 0.075).abs() < 1e-12);
        assert_eq!(per.len(), 2);
        assert_eq!(relative_volume_difference(&[(5.0, 5.0)]).unwrap().0, 0.0);
        assert_eq!(
            relative_volume_difference(&[(1.0, 1.0), (1.0, 0.0)]),
            Err(MetricError::ZeroReferenceVolume(1))
        );
    }

    #[test]
    fn self_evaluation() {
        let g = Geometry::new([8, 8, 6], [0.8, 0.8, 1.25], [0.0; 3]).unwrap();
        let m = BinaryMask3D::from_fn(g, |x, y, z| (2..6).contains(&x) && (1..7).contains(&y) && z > 1);
        let r = evaluate_case(&m, &m).unwrap();
        assert_eq!((r.dice, r.jaccard, r.diameter_abs_err_mm), (1.0, 1.0, 0.0));
        assert_eq!(r.rel_vol_diff, Some(0.0));
        assert_eq!(r.slice_deviation, Some(0));
        assert!(!r.both_empty);
    }

    #[test]
    fn box_missing_one_layer() {
        // ground truth 6x6x6 box, prediction drops its top axial layer
        let g = Geometry::with_dims([10, 10, 10]).unwrap();
        let inside = |x: usize, y: usize, z: usize| (2..8).contains(&x) && (2..8).contains(&y) && (2..8).contains(&z);
        let gt = BinaryMask3D::from_fn(g, inside);
        let pred = BinaryMask3D::from_fn(g, |x, y, z| inside(x, y, z) && z < 7);
        let r = evaluate_case(&pred, &gt).unwrap();
        assert!((r.dice - 2.0 * 180.0 / 396.0).abs() < 1e-12);
        assert!((r.jaccard - 180.0 / 216.0).abs() < 1e-12);
        // 6x6 square of centers: diagonal 5 * sqrt(2)
        assert!((r.gt_diameter.max_diameter_mm - 50f64.sqrt()).abs() < 1e-9);
        assert!(r.diameter_abs_err_mm < 1e-9);
        assert_eq!(r.slice_deviation, Some(0));
        assert_eq!((r.volume_mm3, r.gt_volume_mm3), (180.0, 216.0));
        assert!((r.rel_vol_diff.unwrap() - 36.0 / 216.0).abs() < 1e-12);
    }
}
