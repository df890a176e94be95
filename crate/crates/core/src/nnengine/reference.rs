//! Direct loop implementations of the engine's layers.
//!
//! Slow and obviously correct; the optimized kernels are checked against
//! these.

use super::conv::{conv_out_dim, conv_transpose_out_dim};
use super::tensor::{Scalar, Tensor};
use super::EngineError;

pub fn conv3d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&[T]>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, EngineError> {
    let [n, cin, d, h, wd] = x.shape();
    let [cout, wcin, kd, kh, kw] = w.shape();
    if wcin != cin {
        return Err(EngineError::Shape("reference conv3d: channel mismatch".into()));
    }
    let dim = |i, k| conv_out_dim(i, k, stride, pad).ok_or_else(|| EngineError::Shape("reference conv3d: empty output".into()));
    let (od, oh, ow) = (dim(d, kd)?, dim(h, kh)?, dim(wd, kw)?);
    let mut out = Tensor::zeros([n, cout, od, oh, ow]);
    let p = pad as isize;
    for b in 0..n {
        for co in 0..cout {
            for oz in 0..od {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias.map_or(T::zero(), |bs| bs[co]);
                        for ci in 0..cin {
                            for kz in 0..kd {
                                let iz = (oz * stride + kz) as isize - p;
                                if iz < 0 || iz >= d as isize {
                                    continue;
                                }
                                for ky in 0..kh {
                                    let iy = (oy * stride + ky) as isize - p;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (ox * stride + kx) as isize - p;
                                        if ix < 0 || ix >= wd as isize {
                                            continue;
                                        }
                                        acc = acc
                                            + x.get([b, ci, iz as usize, iy as usize, ix as usize])
                                                * w.get([co, ci, kz, ky, kx]);
                                    }
                                }
                            }
                        }
                        out.set([b, co, oz, oy, ox], acc);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Scatter form: every input voxel stamps the kernel into the output.
pub fn conv_transpose3d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, EngineError> {
    let [n, cin, d, h, wd] = x.shape();
    let [wcin, cout, kd, kh, kw] = w.shape();
    if wcin != cin {
        return Err(EngineError::Shape("reference conv_transpose3d: channel mismatch".into()));
    }
    let dim = |i, k| {
        conv_transpose_out_dim(i, k, stride, pad)
            .ok_or_else(|| EngineError::Shape("reference conv_transpose3d: empty output".into()))
    };
    let (od, oh, ow) = (dim(d, kd)?, dim(h, kh)?, dim(wd, kw)?);
    let mut out = Tensor::zeros([n, cout, od, oh, ow]);
    let p = pad as isize;
    for b in 0..n {
        for ci in 0..cin {
            for z in 0..d {
                for y in 0..h {
                    for xx in 0..wd {
                        let v = x.get([b, ci, z, y, xx]);
                        for co in 0..cout {
                            for kz in 0..kd {
                                let oz = (z * stride + kz) as isize - p;
                                if oz < 0 || oz >= od as isize {
                                    continue;
                                }
                                for ky in 0..kh {
                                    let oy = (y * stride + ky) as isize - p;
                                    if oy < 0 || oy >= oh as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ox = (xx * stride + kx) as isize - p;
                                        if ox < 0 || ox >= ow as isize {
                                            continue;
                                        }
                                        let idx = [b, co, oz as usize, oy as usize, ox as usize];
                                        out.set(idx, out.get(idx) + v * w.get([ci, co, kz, ky, kx]));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Window maximum by exhaustive scan.
pub fn maxpool3d<T: Scalar>(x: &Tensor<T>, window: usize, stride: usize) -> Result<Tensor<T>, EngineError> {
    let [n, c, d, h, w] = x.shape();
    if window > d || window > h || window > w {
        return Err(EngineError::Shape("reference maxpool3d: window larger than input".into()));
    }
    let o = |i: usize| (i - window) / stride + 1;
    let mut out = Tensor::zeros([n, c, o(d), o(h), o(w)]);
    for b in 0..n {
        for ch in 0..c {
            for z in 0..o(d) {
                for y in 0..o(h) {
                    for xx in 0..o(w) {
                        let mut best = T::neg_infinity();
                        for dz in 0..window {
                            for dy in 0..window {
                                for dx in 0..window {
                                    best = best.max(x.get([b, ch, z * stride + dz, y * stride + dy, xx * stride + dx]));
                                }
                            }
                        }
                        out.set([b, ch, z, y, xx], best);
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let mut out = a.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
        *o = *o + v;
    }
    out
}
