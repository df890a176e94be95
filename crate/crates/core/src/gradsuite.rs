//! Central-difference checks over every engine layer and the training loss,
//! in both precisions.
//!
//! Single-precision instances draw their values from a dyadic grid (multiples
//! of 1/16 in [-1, 1]) so that, with the power-of-two probe step, the linear
//! layers evaluate exactly and the comparison is not swamped by rounding.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hed3d::weighted_dice_loss;
use crate::nnengine::conv::{conv_out_dim, conv_transpose_out_dim};
use crate::nnengine::{
    conv3d, conv3d_backward, conv_transpose3d, conv_transpose3d_backward, elementwise_add, grad_check, maxpool3d,
    maxpool3d_backward, relu, relu_backward, sigmoid, sigmoid_backward, EngineError, GradCheckConfig, GradOp, Scalar,
    Tensor,
};

pub const F64_TOLERANCE: f64 = 1e-5;
pub const F32_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_INSTANCES: usize = 20;

pub const OPS: [&str; 7] = [
    "conv3d",
    "conv_transpose3d",
    "maxpool3d",
    "relu",
    "sigmoid",
    "elementwise_add",
    "weighted_dice_loss",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// Worst result of one op over all its random instances.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub precision: Precision,
    pub instances: usize,
    pub probes: usize,
    pub max_rel_error: f64,
    pub worst_instance: usize,
    pub tolerance: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

struct Conv {
    stride: usize,
    pad: usize,
}

impl<T: Scalar> GradOp<T> for Conv {
    fn name(&self) -> String {
        format!("conv3d(stride {}, pad {})", self.stride, self.pad)
    }
    fn forward(&self, inputs: &[Tensor<T>]) -> Result<Tensor<T>, EngineError> {
        conv3d(&inputs[0], &inputs[1], Some(inputs[2].data()), self.stride, self.pad)
    }
    fn backward(&self, inputs: &[Tensor<T>], g: &Tensor<T>) -> Result<Vec<Tensor<T>>, EngineError> {
        let grads = conv3d_backward(&inputs[0], &inputs[1], g, self.stride, self.pad)?;
        let bias = Tensor::from_vec(inputs[2].shape(), grads.bias)?;
        Ok(vec![grads.input, grads.weight, bias])
    }
}

struct ConvTranspose {
    stride: usize,
    pad: usize,
}

impl<T: Scalar> GradOp<T> for ConvTranspose {
    fn name(&self) -> String {
        format!("conv_transpose3d(stride {}, pad {})", self.stride, self.pad)
    }
    fn forward(&self, inputs: &[Tensor<T>]) -> Result<Tensor<T>, EngineError> {
        conv_transpose3d(&inputs[0], &inputs[1], self.stride, self.pad)
    }
    fn backward(&self, inputs: &[Tensor<T>], g: &Tensor<T>) -> Result<Vec<Tensor<T>>, EngineError> {
        let grads = conv_transpose3d_backward(&inputs[0], &inputs[1], g, self.stride, self.pad)?;
        Ok(vec![grads.input, grads.weight])
    }
}

struct MaxPool;

impl<T: Scalar> GradOp<T> for MaxPool {
    fn name(&self) -> String {
        "maxpool3d".into()
    }
    fn forward(&self, inputs: &[Tensor<T>]) -> Result<Tensor<T>, EngineError> {
        Ok(maxpool3d(&inputs[0], 2, 2)?.output)
    }
    fn backward(&self, inputs: &[Tensor<T>], g: &Tensor<T>) -> Result<Vec<Tensor<T>>, EngineError> {
        Ok(vec![maxpool3d_backward(&maxpool3d(&inputs[0], 2, 2)?, g)?])
    }
}

struct Relu;

impl<T: Scalar> GradOp<T> for Relu {
    fn name(&self) -> String {
        "relu".into()
    }
    fn forward(&self, inputs: &[Tensor<T>]) -> Result<Tensor<T>, EngineError> {
        Ok(relu(&inputs[0]))
    }
    fn backward(&self, inputs: &[Tensor<T>], g: &Tensor<T>) -> Result<Vec<Tensor<T>>, EngineError> {
        Ok(vec![relu_backward(&inputs[0], g)?])
    }
}

struct Sigmoid;

impl<T: Scalar> GradOp<T> for Sigmoid {
    fn name(&self) -> String {
        "sigmoid".into()
    }
    fn forward(&self, inputs: &[Tensor<T>]) -> Result<Tensor<T>, EngineError> {
        Ok(sigmoid(&inputs[0]))
    }
    fn backward(&self, inputs: &[Tensor<T>], g: &Tensor<T>) -> Result<Vec<Tensor<T>>, EngineError> {
        Ok(vec![sigmoid_backward(&sigmoid(&inputs[0]), g)?])
    }
}

struct Add;

impl<T: Scalar> GradOp<T> for Add {
    fn name(&self) -> String {
        "elementwise_add".into()
    }
    fn forward(&self, inputs: &[Tensor<T>]) -> Result<Tensor<T>, EngineError> {
        elementwise_add(&inputs[0], &inputs[1])
    }
    fn backward(&self, _inputs: &[Tensor<T>], g: &Tensor<T>) -> Result<Vec<Tensor<T>>, EngineError> {
        let (a, b) = crate::nnengine::elementwise_add_backward(g);
        Ok(vec![a, b])
    }
}

/// The loss as a one-element output, shifted by its value at the probe
/// point so that a 32-bit output keeps the digits that differences need.
struct DiceLoss {
    baseline: f64,
}

fn dice<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>), EngineError> {
    weighted_dice_loss(pred, target).map_err(|e| EngineError::Shape(e.to_string()))
}

impl<T: Scalar> GradOp<T> for DiceLoss {
    fn name(&self) -> String {
        "weighted_dice_loss".into()
    }
    fn forward(&self, inputs: &[Tensor<T>]) -> Result<Tensor<T>, EngineError> {
        let (loss, _) = dice(&inputs[0], &inputs[1])?;
        Ok(Tensor::filled([1, 1, 1, 1, 1], T::from_f64_lossy(loss - self.baseline)))
    }
    fn backward(&self, inputs: &[Tensor<T>], g: &Tensor<T>) -> Result<Vec<Tensor<T>>, EngineError> {
        let (_, grad) = dice(&inputs[0], &inputs[1])?;
        let scale = g.data()[0];
        Ok(vec![grad.map(|v| v * scale), Tensor::zeros(inputs[1].shape())])
    }
    fn frozen_inputs(&self) -> &[usize] {
        &[1]
    }
}

fn value(rng: &mut ChaCha8Rng, precision: Precision, half_range: f64) -> f64 {
    match precision {
        Precision::F64 => rng.gen_range(-half_range..half_range),
        Precision::F32 => {
            let steps = (half_range * 16.0) as i32;
            rng.gen_range(-steps..=steps) as f64 / 16.0
        }
    }
}

fn random<T: Scalar>(rng: &mut ChaCha8Rng, precision: Precision, shape: [usize; 5], half_range: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(value(rng, precision, half_range)))
}

/// Relu probes stay clear of the kink.
fn away_from_zero<T: Scalar>(rng: &mut ChaCha8Rng, precision: Precision, shape: [usize; 5]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| loop {
        let v = value(rng, precision, 1.0);
        if v.abs() >= 1e-3 {
            break T::from_f64_lossy(v);
        }
    })
}

/// Distinct values spaced `2 / len` apart, so no probe reorders a window.
fn distinct<T: Scalar>(rng: &mut ChaCha8Rng, shape: [usize; 5]) -> Tensor<T> {
    let len: usize = shape.iter().product();
    let mut rank: Vec<usize> = (0..len).collect();
    rank.shuffle(rng);
    Tensor::from_fn(shape, |i| T::from_f64_lossy(2.0 * rank[i] as f64 / len as f64 - 1.0))
}

fn check<T: Scalar>(
    rng: &mut ChaCha8Rng,
    op_index: usize,
    precision: Precision,
) -> Result<(f64, usize), EngineError> {
    let cfg = GradCheckConfig {
        projection_seed: rng.gen(),
        ..match precision {
            Precision::F64 => GradCheckConfig::f64_default(),
            Precision::F32 => GradCheckConfig::f32_default(),
        }
    };
    let report = match OPS[op_index] {
        "conv3d" => loop {
            let (n, cin, cout) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
            let k: [usize; 3] = [rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3)];
            let (stride, pad) = (rng.gen_range(1..=2), rng.gen_range(0..=1));
            let s: [usize; 3] = [rng.gen_range(2..=5), rng.gen_range(2..=5), rng.gen_range(2..=5)];
            if (0..3).any(|a| conv_out_dim(s[a], k[a], stride, pad).is_none()) {
                continue;
            }
            let x = random::<T>(rng, precision, [n, cin, s[0], s[1], s[2]], 1.0);
            let w = random::<T>(rng, precision, [cout, cin, k[0], k[1], k[2]], 1.0);
            let b = random::<T>(rng, precision, [1, 1, 1, 1, cout], 1.0);
            break grad_check(&Conv { stride, pad }, &[x, w, b], &cfg)?;
        },
        "conv_transpose3d" => loop {
            let (n, cin, cout) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=2));
            let k: [usize; 3] = [rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4)];
            let (stride, pad) = (rng.gen_range(1..=3), rng.gen_range(0..=1));
            let s: [usize; 3] = [rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3)];
            if (0..3).any(|a| conv_transpose_out_dim(s[a], k[a], stride, pad).is_none()) {
                continue;
            }
            let x = random::<T>(rng, precision, [n, cin, s[0], s[1], s[2]], 1.0);
            let w = random::<T>(rng, precision, [cin, cout, k[0], k[1], k[2]], 1.0);
            break grad_check(&ConvTranspose { stride, pad }, &[x, w], &cfg)?;
        },
        "maxpool3d" => {
            let shape = [1, rng.gen_range(1..=2), rng.gen_range(2..=3), rng.gen_range(2..=4), rng.gen_range(2..=4)];
            grad_check(&MaxPool, &[distinct::<T>(rng, shape)], &cfg)?
        }
        "relu" => {
            let shape = [rng.gen_range(1..=2), 2, 3, 3, 4];
            grad_check(&Relu, &[away_from_zero::<T>(rng, precision, shape)], &cfg)?
        }
        "sigmoid" => {
            let shape = [rng.gen_range(1..=2), 2, 3, 3, 4];
            grad_check(&Sigmoid, &[random::<T>(rng, precision, shape, 3.0)], &cfg)?
        }
        "elementwise_add" => {
            let shape = [rng.gen_range(1..=2), 2, 3, 3, 4];
            let a = random::<T>(rng, precision, shape, 1.0);
            let b = random::<T>(rng, precision, shape, 1.0);
            grad_check(&Add, &[a, b], &cfg)?
        }
        "weighted_dice_loss" => {
            let shape = [rng.gen_range(1..=2), 1, 2, 2, 2];
            // predictions on a 1/32 grid inside [1/16, 15/16]
            let pred = Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(2..=30) as f64 / 32.0));
            let target = Tensor::from_fn(shape, |_| if rng.gen() { T::one() } else { T::zero() });
            let (baseline, _) = dice(&pred, &target)?;
            grad_check(&DiceLoss { baseline }, &[pred, target], &cfg)?
        }
        other => unreachable!("unknown op {other}"),
    };
    Ok((report.max_rel_error, report.probes))
}

/// Runs `instances` random instances of every op in both precisions.
/// Instance `i` of op `o` draws from stream `(o << 32) | i` of a generator
/// seeded with `seed`, so single rows can be reproduced in isolation.
pub fn run_gradient_suite(seed: u64, instances: usize) -> Result<Vec<OpCheck>, EngineError> {
    let mut rows = Vec::new();
    for (op_index, &op) in OPS.iter().enumerate() {
        for precision in [Precision::F64, Precision::F32] {
            let tolerance = match precision {
                Precision::F64 => F64_TOLERANCE,
                Precision::F32 => F32_TOLERANCE,
            };
            let mut row = OpCheck {
                op,
                precision,
                instances,
                probes: 0,
                max_rel_error: 0.0,
                worst_instance: 0,
                tolerance,
            };
            for i in 0..instances {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((op_index as u64) << 32) | i as u64);
                let (err, probes) = match precision {
                    Precision::F64 => check::<f64>(&mut rng, op_index, precision)?,
                    Precision::F32 => check::<f32>(&mut rng, op_index, precision)?,
                };
                row.probes += probes;
                if err > row.max_rel_error {
                    row.max_rel_error = err;
                    row.worst_instance = i;
                }
            }
            rows.push(row);
        }
    }
    Ok(rows)
}
