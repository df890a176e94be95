use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::Hed3DConfig;
use super::NetError;
use crate::nnengine::conv::conv3d_backward_impl;
use crate::nnengine::{
    conv3d, conv_transpose3d, conv_transpose3d_backward, maxpool3d, maxpool3d_backward, relu, relu_backward,
    sigmoid, sigmoid_backward, Parameter, Pooled, Tensor5,
};
use crate::volcore::{tensor_to_volume, volume_to_tensor, Volume3D};

/// Windowed intensities span `[0, 255]`; the network sees `[0, 1]`.
pub const INTENSITY_SCALE: f32 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvSlot {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct SideSlot {
    stage: usize,
    proj: ConvSlot,
    up: usize,
}

/// Name and shape of every parameter, in storage order.
pub fn parameter_layout(config: &Hed3DConfig) -> Vec<(String, Vec<usize>)> {
    let k = config.kernel;
    let mut out = Vec::new();
    let mut cin = config.in_channels;
    for (s, &w) in config.widths.iter().enumerate() {
        for j in 0..config.convs_per_stage {
            let name = format!("stage{}.conv{}", s + 1, j + 1);
            out.push((format!("{name}.weight"), vec![w, cin, k, k, k]));
            out.push((format!("{name}.bias"), vec![w]));
            cin = w;
        }
    }
    for &s in &config.side_stages {
        let w = config.widths[s - 1];
        let (uk, _, _) = Hed3DConfig::upsample_geometry(s);
        out.push((format!("side{s}.proj.weight"), vec![1, w, 1, 1, 1]));
        out.push((format!("side{s}.proj.bias"), vec![1]));
        out.push((format!("side{s}.up.weight"), vec![1, 1, uk, uk, uk]));
    }
    out
}

/// Separable linear-interpolation kernel for upsampling by `factor` with a
/// kernel of `2 * factor` taps.
fn trilinear_kernel(size: usize, factor: usize) -> Vec<f32> {
    if size == 1 {
        return vec![1.0];
    }
    let center = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| 1.0 - (i as f64 - center).abs() / factor as f64)
        .collect();
    let mut out = Vec::with_capacity(size * size * size);
    for &a in &taps {
        for &b in &taps {
            for &c in &taps {
                out.push((a * b * c) as f32);
            }
        }
    }
    out
}

/// The modified HED network: a VGG-style backbone whose deepest stages feed
/// side outputs, fused by element-wise summation of their logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Hed3DNet {
    config: Hed3DConfig,
    params: Vec<Parameter>,
    stages: Vec<Vec<ConvSlot>>,
    sides: Vec<SideSlot>,
}

/// Fused probability map plus, with deep supervision, per-side maps.
#[derive(Debug, Clone)]
pub struct NetOutput {
    pub fused: Tensor5,
    pub sides: Vec<Tensor5>,
}

/// Intermediate values kept by a training forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Per stage: optional pool record, then `(conv input, conv pre-activation)`.
    stages: Vec<(Option<Pooled<f32>>, Vec<(Tensor5, Tensor5)>)>,
    stage_out: Vec<Tensor5>,
    side_proj: Vec<Tensor5>,
    side_prob: Vec<Tensor5>,
    pub output: NetOutput,
}

impl Hed3DNet {
    fn assemble(config: Hed3DConfig, params: Vec<Parameter>) -> Self {
        let mut idx = 0;
        let mut stages = Vec::new();
        for _ in 0..config.stages() {
            let mut convs = Vec::new();
            for _ in 0..config.convs_per_stage {
                convs.push(ConvSlot {
                    weight: idx,
                    bias: idx + 1,
                });
                idx += 2;
            }
            stages.push(convs);
        }
        let mut sides = Vec::new();
        for &stage in &config.side_stages {
            sides.push(SideSlot {
                stage,
                proj: ConvSlot {
                    weight: idx,
                    bias: idx + 1,
                },
                up: idx + 2,
            });
            idx += 3;
        }
        debug_assert_eq!(idx, params.len());
        Self {
            config,
            params,
            stages,
            sides,
        }
    }

    /// He-uniform weights (`bound = sqrt(6 / fan_in)`), zero biases, and
    /// trilinear-interpolation kernels for the upsampling layers.
    pub fn build(config: Hed3DConfig, seed: u64) -> Result<Self, NetError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = parameter_layout(&config)
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let value = if name.ends_with(".bias") {
                    vec![0.0; n]
                } else if name.ends_with(".up.weight") {
                    trilinear_kernel(shape[2], shape[2] / 2)
                } else {
                    let fan_in: usize = shape[1..].iter().product();
                    let bound = (6.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-bound..bound) as f32).collect()
                };
                Parameter::new(name, shape, value)
            })
            .collect();
        Ok(Self::assemble(config, params))
    }

    /// Every parameter zero.
    pub fn zeroed(config: Hed3DConfig) -> Result<Self, NetError> {
        config.validate()?;
        let params = parameter_layout(&config)
            .into_iter()
            .map(|(name, shape)| Parameter::zeros(name, shape))
            .collect();
        Ok(Self::assemble(config, params))
    }

    /// Rebuilds a network from stored parameters, checking names and shapes
    /// against the configuration.
    pub fn from_parameters(config: Hed3DConfig, params: Vec<Parameter>) -> Result<Self, NetError> {
        config.validate()?;
        let layout = parameter_layout(&config);
        if layout.len() != params.len() {
            return Err(NetError::Config(format!(
                "configuration needs {} parameters, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in layout.iter().zip(&params) {
            if *name != p.name {
                return Err(NetError::Config(format!("expected parameter {name}, found {}", p.name)));
            }
            if *shape != p.shape {
                return Err(NetError::ParameterShape {
                    name: name.clone(),
                    expected: shape.clone(),
                    actual: p.shape.clone(),
                });
            }
        }
        Ok(Self::assemble(config, params))
    }

    pub fn config(&self) -> &Hed3DConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Parameter::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    fn tensor(&self, i: usize) -> Tensor5 {
        self.params[i].as_tensor()
    }

    fn check_input(&self, input: &Tensor5) -> Result<(), NetError> {
        let mut expected = self.config.input_shape();
        expected[0] = input.batch();
        if input.shape() != expected || input.batch() == 0 {
            return Err(NetError::InputShape {
                expected,
                actual: input.shape(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor5) -> Result<NetOutput, NetError> {
        Ok(self.forward_trace(input)?.output)
    }

    pub fn forward_trace(&self, input: &Tensor5) -> Result<ForwardTrace, NetError> {
        self.check_input(input)?;
        let pad = self.config.pad();
        let mut stages = Vec::with_capacity(self.stages.len());
        let mut stage_out: Vec<Tensor5> = Vec::with_capacity(self.stages.len());
        let mut x = input.clone();
        for (s, convs) in self.stages.iter().enumerate() {
            let pooled = if s > 0 {
                let p = maxpool3d(&x, 2, 2)?;
                x = p.output.clone();
                Some(p)
            } else {
                None
            };
            let mut layers = Vec::with_capacity(convs.len());
            for slot in convs {
                let w = self.tensor(slot.weight);
                let z = conv3d(&x, &w, Some(&self.params[slot.bias].value), 1, pad)?;
                let a = relu(&z);
                layers.push((x, z));
                x = a;
            }
            stages.push((pooled, layers));
            stage_out.push(x.clone());
        }

        let mut fused_logits: Option<Tensor5> = None;
        let mut side_proj = Vec::with_capacity(self.sides.len());
        let mut side_prob = Vec::new();
        for side in &self.sides {
            let feats = &stage_out[side.stage - 1];
            let q = conv3d(
                feats,
                &self.tensor(side.proj.weight),
                Some(&self.params[side.proj.bias].value),
                1,
                0,
            )?;
            let (_, stride, pad) = Hed3DConfig::upsample_geometry(side.stage);
            let logits = conv_transpose3d(&q, &self.tensor(side.up), stride, pad)?;
            if self.config.deep_supervision {
                side_prob.push(sigmoid(&logits));
            }
            match fused_logits.as_mut() {
                None => fused_logits = Some(logits),
                Some(f) => f.add_assign(&logits),
            }
            side_proj.push(q);
        }
        let fused_logits = fused_logits.expect("at least one side output");
        fused_logits.ensure_finite("fused logits")?;
        let fused = sigmoid(&fused_logits);
        Ok(ForwardTrace {
            stages,
            stage_out,
            side_proj,
            side_prob: side_prob.clone(),
            output: NetOutput {
                fused,
                sides: side_prob,
            },
        })
    }

    /// Accumulates parameter gradients from `d loss / d fused probability`
    /// and, with deep supervision, `d loss / d side probability`.
    pub fn backward(
        &mut self,
        trace: &ForwardTrace,
        grad_fused: &Tensor5,
        grad_sides: Option<&[Tensor5]>,
    ) -> Result<(), NetError> {
        let d_fused_logits = sigmoid_backward(&trace.output.fused, grad_fused)?;
        let mut stage_grads: Vec<Option<Tensor5>> = vec![None; self.stages.len()];

        for (i, side) in self.sides.clone().iter().enumerate() {
            let mut d_logits = d_fused_logits.clone();
            if let Some(gs) = grad_sides {
                d_logits.add_assign(&sigmoid_backward(&trace.side_prob[i], &gs[i])?);
            }
            let (_, stride, pad) = Hed3DConfig::upsample_geometry(side.stage);
            let up = conv_transpose3d_backward(&trace.side_proj[i], &self.tensor(side.up), &d_logits, stride, pad)?;
            self.params[side.up].accumulate(up.weight.data());
            let feats = &trace.stage_out[side.stage - 1];
            let proj = conv3d_backward_impl(feats, &self.tensor(side.proj.weight), &up.input, 1, 0, true)?;
            self.params[side.proj.weight].accumulate(proj.weight.data());
            self.params[side.proj.bias].accumulate(&proj.bias);
            add_grad(&mut stage_grads[side.stage - 1], proj.input);
        }

        let pad = self.config.pad();
        for s in (0..self.stages.len()).rev() {
            let Some(mut g) = stage_grads[s].take() else {
                continue;
            };
            let (pooled, layers) = &trace.stages[s];
            for (j, slot) in self.stages[s].clone().iter().enumerate().rev() {
                let (x, z) = &layers[j];
                let dz = relu_backward(z, &g)?;
                let first_layer = s == 0 && j == 0;
                let grads = conv3d_backward_impl(x, &self.tensor(slot.weight), &dz, 1, pad, !first_layer)?;
                self.params[slot.weight].accumulate(grads.weight.data());
                self.params[slot.bias].accumulate(&grads.bias);
                g = grads.input;
            }
            if let Some(p) = pooled {
                let gp = maxpool3d_backward(p, &g)?;
                add_grad(&mut stage_grads[s - 1], gp);
            }
        }
        Ok(())
    }

    /// Probability map for a windowed (`[0, 255]`) volume with the network's
    /// input dims. The output shares the input geometry.
    pub fn predict(&self, vol: &Volume3D) -> Result<Volume3D, NetError> {
        if vol.dims() != self.config.input_dims {
            return Err(NetError::VolumeDims {
                expected: self.config.input_dims,
                actual: vol.dims(),
            });
        }
        let x = volume_to_tensor(vol, INTENSITY_SCALE)?;
        let out = self.forward(&x)?;
        Ok(tensor_to_volume(&out.fused, 0, 0, *vol.geometry())?)
    }
}

fn add_grad(slot: &mut Option<Tensor5>, g: Tensor5) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => acc.add_assign(&g),
    }
}

pub fn build(config: Hed3DConfig, seed: u64) -> Result<Hed3DNet, NetError> {
    Hed3DNet::build(config, seed)
}

pub fn forward(net: &Hed3DNet, input: &Tensor5) -> Result<NetOutput, NetError> {
    net.forward(input)
}

pub fn predict(net: &Hed3DNet, vol: &Volume3D) -> Result<Volume3D, NetError> {
    net.predict(vol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnengine::reference;
    use crate::volcore::Geometry;

    fn tiny() -> Hed3DConfig {
        Hed3DConfig {
            widths: vec![2, 3, 4],
            input_dims: [8, 8, 4],
            side_stages: vec![2, 3],
            ..Hed3DConfig::desk()
        }
    }

    #[test]
    fn build_is_deterministic() {
        let a = Hed3DNet::build(Hed3DConfig::desk(), 42).unwrap();
        let b = Hed3DNet::build(Hed3DConfig::desk(), 42).unwrap();
        assert_eq!(a, b);
        let c = Hed3DNet::build(Hed3DConfig::desk(), 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn desk_parameter_count() {
        // backbone: sum over convs of cout*cin*27 + cout
        //   1->4: 112, 4->4: 436, 4->8: 872, 8->8: 1736, 8->16: 3472,
        //   16->16: 6928, 16->32: 13856, 32->32: 27680 (x3) -> 110452
        // sides 3,4,5: projections 17 + 33 + 33, upsampling 8^3 + 16^3 + 32^3
        let expected = 110_452 + 83 + (512 + 4096 + 32768);
        assert_eq!(expected, 147_911);
        let net = Hed3DNet::build(Hed3DConfig::desk(), 0).unwrap();
        assert_eq!(net.parameter_count(), expected);
    }

    #[test]
    fn build_rejects_bad_dims() {
        let cfg = Hed3DConfig {
            input_dims: [65, 64, 32],
            ..Hed3DConfig::desk()
        };
        assert!(matches!(Hed3DNet::build(cfg, 0), Err(NetError::Config(_))));
    }

    #[test]
    fn zero_weights_give_half() {
        let net = Hed3DNet::zeroed(tiny()).unwrap();
        let x = Tensor5::filled(net.config().input_shape(), 0.3);
        let out = net.forward(&x).unwrap();
        assert_eq!(out.fused.shape(), [1, 1, 4, 8, 8]);
        assert!(out.fused.data().iter().all(|&v| v == 0.5));
        assert!(out.sides.is_empty());
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let net = Hed3DNet::build(tiny(), 0).unwrap();
        let x = Tensor5::zeros([1, 1, 4, 8, 4]);
        assert!(matches!(net.forward(&x), Err(NetError::InputShape { .. })));
    }

    /// Straight-line recomposition of the network from the loop-based
    /// reference layers.
    fn reference_forward(net: &Hed3DNet, x: &Tensor5) -> Tensor5 {
        let p = net.parameters();
        let get = |name: &str| p.iter().find(|q| q.name == name).unwrap();
        let cfg = net.config();
        let mut h = x.clone();
        let mut outs = Vec::new();
        for s in 1..=cfg.stages() {
            if s > 1 {
                h = reference::maxpool3d(&h, 2, 2).unwrap();
            }
            for j in 1..=cfg.convs_per_stage {
                let w = get(&format!("stage{s}.conv{j}.weight")).as_tensor();
                let b = &get(&format!("stage{s}.conv{j}.bias")).value;
                h = reference::relu(&reference::conv3d(&h, &w, Some(b), 1, 1).unwrap());
            }
            outs.push(h.clone());
        }
        let mut fused: Option<Tensor5> = None;
        for &s in &cfg.side_stages {
            let w = get(&format!("side{s}.proj.weight")).as_tensor();
            let b = &get(&format!("side{s}.proj.bias")).value;
            let q = reference::conv3d(&outs[s - 1], &w, Some(b), 1, 0).unwrap();
            let (_, st, pd) = Hed3DConfig::upsample_geometry(s);
            let up = reference::conv_transpose3d(&q, &get(&format!("side{s}.up.weight")).as_tensor(), st, pd).unwrap();
            fused = Some(match fused {
                None => up,
                Some(f) => reference::add(&f, &up),
            });
        }
        reference::sigmoid(&fused.unwrap())
    }

    #[test]
    fn forward_matches_reference_composition() {
        let cfg = Hed3DConfig {
            input_dims: [16, 16, 16],
            ..Hed3DConfig::desk()
        };
        let net = Hed3DNet::build(cfg, 9).unwrap();
        let x = Tensor5::from_fn(net.config().input_shape(), |i| ((i * 7919) % 255) as f32 / 255.0);
        let fast = net.forward(&x).unwrap().fused;
        let slow = reference_forward(&net, &x);
        assert!(fast.max_abs_diff(&slow) < 1e-6, "{}", fast.max_abs_diff(&slow));
    }

    #[test]
    fn no_dead_parameters() {
        for seed in 0..4 {
            let mut net = Hed3DNet::build(tiny(), seed).unwrap();
            let x = Tensor5::from_fn(net.config().input_shape(), |i| ((i * 31 + seed as usize * 7) % 17) as f32 / 17.0);
            let trace = net.forward_trace(&x).unwrap();
            let g = Tensor5::from_fn(trace.output.fused.shape(), |i| if i % 3 == 0 { 1.0 } else { -0.5 });
            net.backward(&trace, &g, None).unwrap();
            for p in net.parameters() {
                assert!(p.grad.iter().any(|&v| v != 0.0), "seed {seed}: {} has no gradient", p.name);
            }
        }
    }

    #[test]
    fn predict_keeps_geometry() {
        let net = Hed3DNet::zeroed(tiny()).unwrap();
        let g = Geometry::new([8, 8, 4], [0.8, 0.8, 1.5], [1.0, -2.0, 3.0]).unwrap();
        let vol = Volume3D::filled(g, 100.0);
        let p = net.predict(&vol).unwrap();
        assert_eq!(p.geometry(), &g);
        assert!(p.data().iter().all(|&v| v == 0.5));
        let wrong = Volume3D::filled(Geometry::with_dims([8, 8, 8]).unwrap(), 0.0);
        assert!(matches!(net.predict(&wrong), Err(NetError::VolumeDims { .. })));
    }
}
