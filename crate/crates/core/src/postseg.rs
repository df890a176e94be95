//! Probability map to final mask: global Otsu threshold, then the largest
//! 26-connected component.

use thiserror::Error;

use crate::volcore::{histogram, BinaryMask3D, Geometry, Volume3D, VolumeError};

pub const OTSU_BINS: usize = 256;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PostError {
    #[error("probability map has no separable classes (all values fall in one histogram bin)")]
    NoSeparableClasses,
    #[error("probability {value} at voxel {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f32 },
    #[error("threshold {0} is outside [0, 1]")]
    BadThreshold(f64),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Index of the histogram cut maximizing between-class variance: classes are
/// bins `0..=k` and `k+1..`. Ties go to the lowest cut.
///
/// With class counts `n0, n1` and bin-index sums `s0, s1`, the variance is
/// proportional to `(n1 s0 - n0 s1)^2 / (n0 n1)`, which is compared exactly
/// in integers.
pub fn otsu_cut(counts: &[u64]) -> Option<usize> {
    let total_n: u128 = counts.iter().map(|&c| c as u128).sum();
    let total_s: u128 = counts.iter().enumerate().map(|(i, &c)| i as u128 * c as u128).sum();
    let mut best: Option<(usize, u128, u128)> = None;
    let (mut n0, mut s0) = (0u128, 0u128);
    for k in 0..counts.len().saturating_sub(1) {
        n0 += counts[k] as u128;
        s0 += k as u128 * counts[k] as u128;
        let n1 = total_n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = total_s - s0;
        let diff = (n1 * s0).abs_diff(n0 * s1);
        let num = diff * diff;
        let den = n0 * n1;
        let better = match best {
            None => true,
            Some((_, bn, bd)) => ratio_gt(num, den, bn, bd),
        };
        if better {
            best = Some((k, num, den));
        }
    }
    best.map(|(k, _, _)| k)
}

/// `a / b > c / d` for positive denominators, without overflow.
fn ratio_gt(a: u128, b: u128, c: u128, d: u128) -> bool {
    let (qa, ra) = (a / b, a % b);
    let (qc, rc) = (c / d, c % d);
    if qa != qc {
        return qa > qc;
    }
    if ra == 0 || rc == 0 {
        return ra > 0 && rc == 0;
    }
    // compare ra/b with rc/d via the reciprocals d/rc and b/ra
    ratio_gt(d, rc, b, ra)
}

/// Global Otsu threshold of a probability map over 256 bins on `[0, 1]`,
/// returned as the upper edge of the last background bin.
pub fn otsu_threshold(prob: &Volume3D) -> Result<f64, PostError> {
    if let Some(i) = prob.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(PostError::OutOfRange {
            index: i,
            value: prob.data()[i],
        });
    }
    let h = histogram(prob.data().iter().copied(), OTSU_BINS, 0.0, 1.0)?;
    let k = otsu_cut(&h.counts).ok_or(PostError::NoSeparableClasses)?;
    Ok((k + 1) as f64 / OTSU_BINS as f64)
}

/// Foreground where `p > threshold`.
pub fn binarize(prob: &Volume3D, threshold: f64) -> Result<BinaryMask3D, PostError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(PostError::BadThreshold(threshold));
    }
    let data = prob.data().iter().map(|&p| p as f64 > threshold).collect();
    Ok(BinaryMask3D::new(*prob.geometry(), data)?)
}

/// Connected components of a mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabeling {
    pub geometry: Geometry,
    /// 0 for background, otherwise `1..=count` in order of each component's
    /// lowest flat index.
    pub labels: Vec<u32>,
    pub count: usize,
    /// Voxel count of label `i + 1` at index `i`.
    pub sizes: Vec<usize>,
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        let p = parent[i as usize];
        parent[i as usize] = parent[p as usize];
        i = p;
    }
    i
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // keep the smaller index as the root
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// 26-connected labeling by union-find over already-visited neighbours.
pub fn label_components(mask: &BinaryMask3D) -> ComponentLabeling {
    let [nx, ny, nz] = mask.dims();
    let m = mask.data();
    let mut parent: Vec<u32> = (0..m.len() as u32).collect();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = x + nx * (y + ny * z);
                if !m[i] {
                    continue;
                }
                // the 13 neighbours that precede (x, y, z) in flat order
                for dz in -1i64..=0 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            if dz == 0 && (dy > 0 || (dy == 0 && dx >= 0)) {
                                continue;
                            }
                            let (qx, qy, qz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                            if qx < 0 || qy < 0 || qz < 0 || qx >= nx as i64 || qy >= ny as i64 {
                                continue;
                            }
                            let j = qx as usize + nx * (qy as usize + ny * qz as usize);
                            if m[j] {
                                union(&mut parent, i as u32, j as u32);
                            }
                        }
                    }
                }
            }
        }
    }
    let mut labels = vec![0u32; m.len()];
    let mut sizes = Vec::new();
    for i in 0..m.len() {
        if !m[i] {
            continue;
        }
        let r = find(&mut parent, i as u32) as usize;
        if r == i {
            sizes.push(0);
            labels[i] = sizes.len() as u32;
        } else {
            // roots are the lowest index of their component, so already labelled
            labels[i] = labels[r];
        }
        sizes[labels[i] as usize - 1] += 1;
    }
    ComponentLabeling {
        geometry: *mask.geometry(),
        labels,
        count: sizes.len(),
        sizes,
    }
}

/// Keeps the component with the most voxels; ties go to the component
/// containing the lowest flat index.
pub fn largest_component(mask: &BinaryMask3D) -> BinaryMask3D {
    let lab = label_components(mask);
    let Some(best) = lab
        .sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i as u32 + 1)
    else {
        return BinaryMask3D::empty(*mask.geometry());
    };
    let data = lab.labels.iter().map(|&l| l == best).collect();
    BinaryMask3D::new(*mask.geometry(), data).expect("labels match mask geometry")
}

/// Otsu binarization followed by largest-component selection. A map with no
/// separable classes yields an empty mask.
pub fn postprocess(prob: &Volume3D) -> Result<BinaryMask3D, PostError> {
    match otsu_threshold(prob) {
        Ok(t) => Ok(largest_component(&binarize(prob, t)?)),
        Err(PostError::NoSeparableClasses) => Ok(BinaryMask3D::empty(*prob.geometry())),
        Err(e) => Err(e),
    }
}
