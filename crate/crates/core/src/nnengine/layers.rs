//! Pooling, activations and element-wise fusion.

use super::tensor::{Scalar, Tensor};
use super::EngineError;

/// Result of a max-pool forward pass; `argmax` holds, per output voxel, the
/// flat spatial index of the winning input voxel within its channel.
#[derive(Debug, Clone)]
pub struct Pooled<T: Scalar> {
    pub output: Tensor<T>,
    pub argmax: Vec<u32>,
    pub input_shape: [usize; 5],
}

/// Trailing voxels that do not fill a whole window are dropped.
pub fn maxpool3d<T: Scalar>(x: &Tensor<T>, window: usize, stride: usize) -> Result<Pooled<T>, EngineError> {
    let [n, c, d, h, w] = x.shape();
    if window == 0 || stride == 0 {
        return Err(EngineError::Shape("maxpool3d: zero window or stride".into()));
    }
    if window > d || window > h || window > w {
        return Err(EngineError::Shape(format!(
            "maxpool3d: window {window} larger than input {:?}",
            x.spatial()
        )));
    }
    let (od, oh, ow) = ((d - window) / stride + 1, (h - window) / stride + 1, (w - window) / stride + 1);
    let mut output = Tensor::zeros([n, c, od, oh, ow]);
    let mut argmax = Vec::with_capacity(output.len());
    let out = output.data_mut();
    let mut o = 0;
    for b in 0..n {
        for ch in 0..c {
            let src = x.channel(b, ch);
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut best_i = ((z * stride) * h + y * stride) * w + xx * stride;
                        let mut best = src[best_i];
                        // scan in increasing flat order; strict > keeps the first maximum
                        for dz in 0..window {
                            for dy in 0..window {
                                let row = ((z * stride + dz) * h + y * stride + dy) * w + xx * stride;
                                for (dx, &v) in src[row..row + window].iter().enumerate() {
                                    if v > best {
                                        best = v;
                                        best_i = row + dx;
                                    }
                                }
                            }
                        }
                        out[o] = best;
                        argmax.push(best_i as u32);
                        o += 1;
                    }
                }
            }
        }
    }
    Ok(Pooled {
        output,
        argmax,
        input_shape: x.shape(),
    })
}

pub fn maxpool3d_backward<T: Scalar>(pooled: &Pooled<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>, EngineError> {
    grad_out.ensure_shape(pooled.output.shape(), "maxpool3d backward grad")?;
    let [n, c, d, h, w] = pooled.input_shape;
    let plane = d * h * w;
    let per_channel = pooled.output.spatial_len();
    let mut gx = Tensor::zeros(pooled.input_shape);
    let g = grad_out.data();
    let gxd = gx.data_mut();
    for nc in 0..n * c {
        for j in 0..per_channel {
            let o = nc * per_channel + j;
            let i = nc * plane + pooled.argmax[o] as usize;
            gxd[i] = gxd[i] + g[o];
        }
    }
    Ok(gx)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient 0 at the kink.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>, EngineError> {
    grad_out.ensure_shape(x.shape(), "relu backward grad")?;
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        if xv <= T::zero() {
            *gv = T::zero();
        }
    }
    Ok(g)
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    // split by sign so exp never overflows
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Takes the forward *output* `s`: ds/dx = s (1 - s).
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>, EngineError> {
    grad_out.ensure_shape(output.shape(), "sigmoid backward grad")?;
    let mut g = grad_out.clone();
    for (gv, &s) in g.data_mut().iter_mut().zip(output.data()) {
        *gv = *gv * s * (T::one() - s);
    }
    Ok(g)
}

pub fn elementwise_add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, EngineError> {
    b.ensure_shape(a.shape(), "elementwise_add")?;
    let mut out = a.clone();
    out.add_assign(b);
    Ok(out)
}

/// Both operands receive the incoming gradient unchanged.
pub fn elementwise_add_backward<T: Scalar>(grad_out: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    (grad_out.clone(), grad_out.clone())
}
