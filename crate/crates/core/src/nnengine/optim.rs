//! Trainable parameters, the Adam optimizer and the reduce-on-plateau
//! learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor5;
use super::EngineError;

/// A named trainable array with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    m: Vec<f32>,
    v: Vec<f32>,
    step: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f32>) -> Self {
        let n = value.len();
        debug_assert_eq!(n, shape.iter().product::<usize>());
        Self {
            name: name.into(),
            shape,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            value,
            step: 0,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Value viewed as a rank-5 tensor; only valid for 5-d shapes.
    pub fn as_tensor(&self) -> Tensor5 {
        let s: [usize; 5] = self.shape.as_slice().try_into().expect("rank-5 parameter");
        Tensor5::from_vec(s, self.value.clone()).expect("parameter buffer matches shape")
    }

    pub fn accumulate(&mut self, g: &[f32]) {
        debug_assert_eq!(g.len(), self.grad.len());
        for (a, &b) in self.grad.iter_mut().zip(g) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over every parameter. Gradients are
/// left in place; the caller zeroes them. Nothing is modified when any
/// gradient is non-finite.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Parameter>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(), EngineError> {
    let params: Vec<&mut Parameter> = params.into_iter().collect();
    for p in &params {
        if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
            return Err(EngineError::NonFiniteGradient {
                param: p.name.clone(),
                index: i,
            });
        }
    }
    for p in params {
        p.step += 1;
        let t = p.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..p.value.len() {
            let g = p.grad[i] as f64;
            let m = cfg.beta1 * p.m[i] as f64 + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * p.v[i] as f64 + (1.0 - cfg.beta2) * g * g;
            p.m[i] = m as f32;
            p.v[i] = v as f32;
            let update = lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
            p.value[i] = (p.value[i] as f64 - update) as f32;
        }
    }
    Ok(())
}

/// Multiplies the learning rate by `factor` once validation loss has failed
/// to improve by more than `threshold` for `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub factor: f64,
    pub patience: u32,
    pub min_lr: f64,
    pub threshold: f64,
    pub best: f64,
    remaining: u32,
}

impl PlateauSchedule {
    pub fn new(initial_lr: f64, factor: f64, patience: u32, min_lr: f64, threshold: f64) -> Self {
        Self {
            lr: initial_lr,
            factor,
            patience: patience.max(1),
            min_lr,
            threshold,
            best: f64::INFINITY,
            remaining: patience.max(1),
        }
    }

    pub fn with_patience(patience: u32) -> Self {
        Self::new(1e-4, 0.2, patience, 1e-6, 1e-4)
    }

    pub fn step(&mut self, validation_loss: f64) -> f64 {
        if validation_loss < self.best - self.threshold {
            self.best = validation_loss;
            self.remaining = self.patience;
        } else {
            self.remaining -= 1;
            if self.remaining == 0 {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.remaining = self.patience;
            }
        }
        self.lr
    }
}

impl Default for PlateauSchedule {
    fn default() -> Self {
        Self::with_patience(10)
    }
}

/// Free-function form of [`PlateauSchedule::step`].
pub fn plateau_step(s: &mut PlateauSchedule, validation_loss: f64) -> f64 {
    s.step(validation_loss)
}
