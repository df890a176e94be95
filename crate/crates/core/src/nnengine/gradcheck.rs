//! Central-difference verification of analytic backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{Scalar, Tensor};
use super::EngineError;

/// A differentiable operation with explicit forward and backward passes.
pub trait GradOp<T: Scalar> {
    fn name(&self) -> String;

    fn forward(&self, inputs: &[Tensor<T>]) -> Result<Tensor<T>, EngineError>;

    /// Gradients with respect to every input, given the output gradient.
    fn backward(&self, inputs: &[Tensor<T>], grad_out: &Tensor<T>) -> Result<Vec<Tensor<T>>, EngineError>;

    /// Inputs excluded from probing (e.g. non-differentiable targets).
    fn frozen_inputs(&self) -> &[usize] {
        &[]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Probe step is `step * max(1, |x|)`.
    pub step: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub projection_seed: u64,
}

impl GradCheckConfig {
    pub fn f64_default() -> Self {
        Self {
            step: 1e-4,
            floor: 1e-8,
            projection_seed: 0,
        }
    }

    /// Single precision cannot resolve a 1e-4 step against its rounding
    /// noise, so probes use a wider one. It is a power of two, which keeps
    /// `x ± h` exact for inputs on a coarse dyadic grid.
    pub fn f32_default() -> Self {
        Self {
            step: 0.0078125,
            floor: 1e-8,
            projection_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, element)` where the worst error occurred.
    pub worst: Option<(usize, usize)>,
    pub probes: usize,
}

/// Compares the analytic gradient of `<op(inputs), r>` for a random
/// projection `r` against central differences, element by element, and
/// returns the maximum of `|a - n| / max(|a|, |n|, floor)`.
pub fn grad_check<T: Scalar>(
    op: &dyn GradOp<T>,
    inputs: &[Tensor<T>],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, EngineError> {
    let out = op.forward(inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.projection_seed);
    let proj: Tensor<T> = Tensor::from_fn(out.shape(), |_| {
        // multiples of 1/64 keep products with dyadic inputs exact
        let mag = rng.gen_range(32..=64) as f64 / 64.0;
        T::from_f64_lossy(if rng.gen::<bool>() { mag } else { -mag })
    });
    let analytic = op.backward(inputs, &proj)?;
    if analytic.len() != inputs.len() {
        return Err(EngineError::Shape(format!(
            "{}: backward returned {} gradients for {} inputs",
            op.name(),
            analytic.len(),
            inputs.len()
        )));
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        probes: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        if op.frozen_inputs().contains(&i) {
            continue;
        }
        grad.ensure_shape(inputs[i].shape(), &format!("{} grad {i}", op.name()))?;
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            let h = cfg.step * x.as_f64().abs().max(1.0);
            let hi = T::from_f64_lossy(x.as_f64() + h);
            let lo = T::from_f64_lossy(x.as_f64() - h);
            probe[i].data_mut()[j] = hi;
            let f_hi = op.forward(&probe)?.dot(&proj);
            probe[i].data_mut()[j] = lo;
            let f_lo = op.forward(&probe)?.dot(&proj);
            probe[i].data_mut()[j] = x;
            // the step actually taken after rounding to T
            let numeric = (f_hi - f_lo) / (hi.as_f64() - lo.as_f64());
            let a = grad.data()[j].as_f64();
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            report.probes += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Square;

    impl GradOp<f64> for Square {
        fn name(&self) -> String {
            "square".into()
        }
        fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>, EngineError> {
            Ok(inputs[0].map(|v| v * v))
        }
        fn backward(&self, inputs: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>, EngineError> {
            let mut out = g.clone();
            for (o, &x) in out.data_mut().iter_mut().zip(inputs[0].data()) {
                *o *= 2.0 * x;
            }
            Ok(vec![out])
        }
    }

    struct WrongSquare;

    impl GradOp<f64> for WrongSquare {
        fn name(&self) -> String {
            "wrong".into()
        }
        fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>, EngineError> {
            Square.forward(inputs)
        }
        fn backward(&self, inputs: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>, EngineError> {
            let mut out = Square.backward(inputs, g)?;
            out[0].data_mut()[3] *= 1.01;
            Ok(out)
        }
    }

    #[test]
    fn accepts_correct_and_flags_wrong_gradient() {
        let x = Tensor::from_fn([1, 1, 1, 2, 3], |i| i as f64 * 0.3 - 0.7);
        let ok = grad_check(&Square, &[x.clone()], &GradCheckConfig::f64_default()).unwrap();
        assert!(ok.max_rel_error < 1e-8, "{ok:?}");
        assert_eq!(ok.probes, 6);
        let bad = grad_check(&WrongSquare, &[x], &GradCheckConfig::f64_default()).unwrap();
        assert!(bad.max_rel_error > 1e-3);
        assert_eq!(bad.worst, Some((0, 3)));
    }
}
