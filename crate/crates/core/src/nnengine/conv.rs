//! 3D convolution and transposed convolution via im2col + gemm.
//!
//! Cross-correlation convention, no kernel flip: output voxel `o` reads
//! input voxel `o * stride - pad + k` for every kernel offset `k`.
//! Weights are laid out `(Cout, Cin, kd, kh, kw)` for convolutions and
//! `(Cin, Cout, kd, kh, kw)` for transposed convolutions, so a transposed
//! convolution with weight `w` is exactly the adjoint of a convolution
//! with the same buffer.

use super::tensor::{gemm, MatView, Scalar, Tensor};
use super::EngineError;

/// Upper bound on the number of elements in one im2col buffer.
const CHUNK_ELEMS: usize = 1 << 20;

pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let span = input + 2 * pad;
    if stride == 0 || span < kernel {
        None
    } else {
        Some((span - kernel) / stride + 1)
    }
}

pub fn conv_transpose_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if input == 0 || stride == 0 {
        return None;
    }
    let full = (input - 1) * stride + kernel;
    (full > 2 * pad).then(|| full - 2 * pad)
}

/// Index mapping between a "big" grid and the "small" grid of convolution
/// output positions: small position `o` touches big position
/// `o * stride - pad + k`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Patches {
    pub channels: usize,
    pub big: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: usize,
    pub pad: usize,
    pub small: [usize; 3],
}

impl Patches {
    fn patch_len(&self) -> usize {
        self.channels * self.kernel.iter().product::<usize>()
    }

    fn small_rows(&self) -> usize {
        self.small[0] * self.small[1]
    }

    fn small_len(&self) -> usize {
        self.small.iter().product()
    }

    fn big_len(&self) -> usize {
        self.big.iter().product()
    }

    /// Rows of the small grid per chunk so that one column buffer stays
    /// under `CHUNK_ELEMS`.
    fn rows_per_chunk(&self) -> usize {
        let per_row = self.patch_len() * self.small[2];
        (CHUNK_ELEMS / per_row.max(1)).max(1)
    }

    fn chunks(&self) -> impl Iterator<Item = (usize, usize)> {
        let step = self.rows_per_chunk();
        let rows = self.small_rows();
        (0..rows).step_by(step).map(move |r0| (r0, step.min(rows - r0)))
    }

    /// Visits every (patch row, small-grid row segment) pair of a chunk and
    /// hands out the matching big-grid row, or `None` when the row falls in
    /// the padding.
    #[inline]
    fn for_each_segment(
        &self,
        row0: usize,
        nrows: usize,
        mut f: impl FnMut(usize, usize, Option<(usize, isize)>),
    ) {
        let [kd, kh, kw] = self.kernel;
        let [bd, bh, bw] = self.big;
        let sh = self.small[1];
        let s = self.stride as isize;
        let p = self.pad as isize;
        let mut prow = 0;
        for c in 0..self.channels {
            for kz in 0..kd {
                for ky in 0..kh {
                    for kx in 0..kw {
                        for r in 0..nrows {
                            let (oz, oy) = ((row0 + r) / sh, (row0 + r) % sh);
                            let iz = oz as isize * s - p + kz as isize;
                            let iy = oy as isize * s - p + ky as isize;
                            let src = if iz < 0 || iy < 0 || iz >= bd as isize || iy >= bh as isize {
                                None
                            } else {
                                Some((((c * bd + iz as usize) * bh + iy as usize) * bw, kx as isize - p))
                            };
                            f(prow, r, src);
                        }
                        prow += 1;
                    }
                }
            }
        }
    }

    /// Range of small-grid x positions whose big-grid x lands inside `[0, bw)`.
    #[inline]
    fn valid_x(&self, shift: isize) -> (usize, usize) {
        let s = self.stride as isize;
        let bw = self.big[2] as isize;
        let sw = self.small[2] as isize;
        // need 0 <= ox * s + shift < bw
        let lo = if shift >= 0 { 0 } else { (-shift + s - 1) / s };
        let hi = if bw - shift <= 0 { 0 } else { ((bw - shift + s - 1) / s).min(sw) };
        (lo.min(sw) as usize, hi.max(lo.min(sw)) as usize)
    }

    /// Fills `cols` (patch_len x chunk positions, row-major) from `x`.
    pub fn gather<T: Scalar>(&self, x: &[T], row0: usize, nrows: usize, cols: &mut [T]) {
        let sw = self.small[2];
        let pc = nrows * sw;
        let s = self.stride;
        self.for_each_segment(row0, nrows, |prow, r, src| {
            let seg = &mut cols[prow * pc + r * sw..prow * pc + (r + 1) * sw];
            match src {
                None => seg.fill(T::zero()),
                Some((base, shift)) => {
                    let (lo, hi) = self.valid_x(shift);
                    seg[..lo].fill(T::zero());
                    seg[hi..].fill(T::zero());
                    if s == 1 {
                        let start = (base as isize + lo as isize + shift) as usize;
                        seg[lo..hi].copy_from_slice(&x[start..start + (hi - lo)]);
                    } else {
                        for (ox, dst) in seg.iter_mut().enumerate().take(hi).skip(lo) {
                            *dst = x[(base as isize + (ox * s) as isize + shift) as usize];
                        }
                    }
                }
            }
        });
    }

    /// Adjoint of `gather`: accumulates `cols` back into `x`.
    pub fn scatter_add<T: Scalar>(&self, cols: &[T], row0: usize, nrows: usize, x: &mut [T]) {
        let sw = self.small[2];
        let pc = nrows * sw;
        let s = self.stride;
        self.for_each_segment(row0, nrows, |prow, r, src| {
            if let Some((base, shift)) = src {
                let seg = &cols[prow * pc + r * sw..prow * pc + (r + 1) * sw];
                let (lo, hi) = self.valid_x(shift);
                for (ox, &v) in seg.iter().enumerate().take(hi).skip(lo) {
                    let i = (base as isize + (ox * s) as isize + shift) as usize;
                    x[i] = x[i] + v;
                }
            }
        });
    }
}

fn kernel_of<T: Scalar>(w: &Tensor<T>) -> [usize; 3] {
    [w.shape()[2], w.shape()[3], w.shape()[4]]
}

fn conv_patches<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<Patches, EngineError> {
    let [_, cin, ..] = x.shape();
    let [_, wcin, ..] = w.shape();
    if wcin != cin {
        return Err(EngineError::Shape(format!(
            "conv3d: input has {cin} channels, weight {:?} expects {wcin}",
            w.shape()
        )));
    }
    let kernel = kernel_of(w);
    let big = x.spatial();
    let mut small = [0; 3];
    for a in 0..3 {
        small[a] = conv_out_dim(big[a], kernel[a], stride, pad).ok_or_else(|| {
            EngineError::Shape(format!(
                "conv3d: non-positive output (input {big:?}, kernel {kernel:?}, stride {stride}, pad {pad})"
            ))
        })?;
    }
    Ok(Patches {
        channels: cin,
        big,
        kernel,
        stride,
        pad,
        small,
    })
}

fn conv_transpose_patches<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Patches, EngineError> {
    let [_, cin, ..] = x.shape();
    let [wcin, cout, ..] = w.shape();
    if wcin != cin {
        return Err(EngineError::Shape(format!(
            "conv_transpose3d: input has {cin} channels, weight {:?} expects {wcin}",
            w.shape()
        )));
    }
    let kernel = kernel_of(w);
    let small = x.spatial();
    let mut big = [0; 3];
    for a in 0..3 {
        big[a] = conv_transpose_out_dim(small[a], kernel[a], stride, pad).ok_or_else(|| {
            EngineError::Shape(format!(
                "conv_transpose3d: non-positive output (input {small:?}, kernel {kernel:?}, stride {stride}, pad {pad})"
            ))
        })?;
    }
    Ok(Patches {
        channels: cout,
        big,
        kernel,
        stride,
        pad,
        small,
    })
}

pub fn conv3d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&[T]>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, EngineError> {
    let pt = conv_patches(x, w, stride, pad)?;
    let cout = w.shape()[0];
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(EngineError::Shape(format!("conv3d: bias of {} for {cout} channels", b.len())));
        }
    }
    let n = x.batch();
    let [od, oh, ow] = pt.small;
    let plen = pt.small_len();
    let k = pt.patch_len();
    let mut out = Tensor::zeros([n, cout, od, oh, ow]);
    let mut cols = Vec::new();
    for b in 0..n {
        let xi = x.item(b);
        let oi = out.item_mut(b);
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                oi[co * plen..(co + 1) * plen].fill(bv);
            }
        }
        for (row0, nrows) in pt.chunks() {
            let pc = nrows * ow;
            cols.resize(k * pc, T::zero());
            pt.gather(xi, row0, nrows, &mut cols);
            gemm(
                cout,
                k,
                pc,
                T::one(),
                w.data(),
                MatView::row_major(0, k),
                &cols,
                MatView::row_major(0, pc),
                T::one(),
                oi,
                MatView { offset: row0 * ow, rs: plen, cs: 1 },
            );
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    /// Per output channel; empty for transposed convolutions.
    pub bias: Vec<T>,
}

pub fn conv3d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads<T>, EngineError> {
    conv3d_backward_impl(x, w, grad_out, stride, pad, true)
}

/// Skips the input gradient when `need_input` is false (first layer);
/// `ConvGrads::input` is then all zeros.
pub(crate) fn conv3d_backward_impl<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_input: bool,
) -> Result<ConvGrads<T>, EngineError> {
    let pt = conv_patches(x, w, stride, pad)?;
    let cout = w.shape()[0];
    let n = x.batch();
    let [od, oh, ow] = pt.small;
    grad_out.ensure_shape([n, cout, od, oh, ow], "conv3d backward grad")?;
    let plen = pt.small_len();
    let k = pt.patch_len();

    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = vec![T::zero(); cout];
    let mut cols = Vec::new();
    for b in 0..n {
        let xi = x.item(b);
        let gi = grad_out.item(b);
        for (co, acc) in gb.iter_mut().enumerate() {
            *acc = gi[co * plen..(co + 1) * plen].iter().fold(*acc, |s, &v| s + v);
        }
        for (row0, nrows) in pt.chunks() {
            let pc = nrows * ow;
            let gview = MatView { offset: row0 * ow, rs: plen, cs: 1 };
            cols.resize(k * pc, T::zero());
            pt.gather(xi, row0, nrows, &mut cols);
            // dW += dY_chunk * cols^T
            gemm(
                cout,
                pc,
                k,
                T::one(),
                gi,
                gview,
                &cols,
                MatView::transposed(0, pc),
                T::one(),
                gw.data_mut(),
                MatView::row_major(0, k),
            );
            if !need_input {
                continue;
            }
            // dcols = W^T * dY_chunk, then fold back onto the input grid
            gemm(
                k,
                cout,
                pc,
                T::one(),
                w.data(),
                MatView::transposed(0, k),
                gi,
                gview,
                T::zero(),
                &mut cols,
                MatView::row_major(0, pc),
            );
            pt.scatter_add(&cols, row0, nrows, gx.item_mut(b));
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

pub fn conv_transpose3d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, EngineError> {
    let pt = conv_transpose_patches(x, w, stride, pad)?;
    let cin = x.channels();
    let cout = w.shape()[1];
    let n = x.batch();
    let [bd, bh, bw] = pt.big;
    let sw = pt.small[2];
    let slen = pt.small_len();
    let k = pt.patch_len();
    let mut out = Tensor::zeros([n, cout, bd, bh, bw]);
    let mut cols = Vec::new();
    for b in 0..n {
        let xi = x.item(b);
        for (row0, nrows) in pt.chunks() {
            let pc = nrows * sw;
            cols.resize(k * pc, T::zero());
            // cols = W^T (as Cin x Cout*K) * x_chunk
            gemm(
                k,
                cin,
                pc,
                T::one(),
                w.data(),
                MatView::transposed(0, k),
                xi,
                MatView { offset: row0 * sw, rs: slen, cs: 1 },
                T::zero(),
                &mut cols,
                MatView::row_major(0, pc),
            );
            pt.scatter_add(&cols, row0, nrows, out.item_mut(b));
        }
    }
    debug_assert_eq!(out.spatial_len(), pt.big_len());
    Ok(out)
}

pub fn conv_transpose3d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads<T>, EngineError> {
    let pt = conv_transpose_patches(x, w, stride, pad)?;
    let cin = x.channels();
    let cout = w.shape()[1];
    let n = x.batch();
    let [bd, bh, bw] = pt.big;
    grad_out.ensure_shape([n, cout, bd, bh, bw], "conv_transpose3d backward grad")?;
    let sw = pt.small[2];
    let slen = pt.small_len();
    let k = pt.patch_len();
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    let mut cols = Vec::new();
    for b in 0..n {
        let xi = x.item(b);
        let gi = grad_out.item(b);
        for (row0, nrows) in pt.chunks() {
            let pc = nrows * sw;
            let xview = MatView { offset: row0 * sw, rs: slen, cs: 1 };
            cols.resize(k * pc, T::zero());
            pt.gather(gi, row0, nrows, &mut cols);
            gemm(
                cin,
                k,
                pc,
                T::one(),
                w.data(),
                MatView::row_major(0, k),
                &cols,
                MatView::row_major(0, pc),
                T::zero(),
                gx.item_mut(b),
                xview,
            );
            gemm(
                cin,
                pc,
                k,
                T::one(),
                xi,
                xview,
                &cols,
                MatView::transposed(0, pc),
                T::one(),
                gw.data_mut(),
                MatView::row_major(0, k),
            );
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: Vec::new(),
    })
}
