use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::weighted_dice_loss;
use super::net::Hed3DNet;
use super::NetError;
use crate::nnengine::{adam_step, AdamConfig, Parameter, PlateauSchedule, Tensor5};

/// Indexed access to `(image, target)` pairs, each shaped `(1, 1, D, H, W)`.
///
/// Implementations may build samples on demand, e.g. by augmenting a scan.
pub trait SampleSource {
    fn len(&self) -> usize;

    fn sample(&self, index: usize) -> Result<(Tensor5, Tensor5), NetError>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}


impl SampleSource for Vec<(Tensor5, Tensor5)> {
    fn len(&self) -> usize {
        Vec::len(self)
    }

    fn sample(&self, index: usize) -> Result<(Tensor5, Tensor5), NetError> {
        Ok(self[index].clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub plateau_factor: f64,
    pub plateau_patience: u32,
    pub min_learning_rate: f64,
    /// Fraction of the cases held out for validation by [`split_validation`].
    pub validation_fraction: f64,
    pub seed: u64,
    /// Epochs between periodic checkpoints written by the caller through
    /// the `train_with` observer; 0 disables them.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 2,
            learning_rate: 1e-4,
            plateau_factor: 0.2,
            plateau_patience: 10,
            min_learning_rate: 1e-6,
            validation_fraction: 0.2,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::TrainConfig(m));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.validation_fraction
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return bad(format!("plateau factor must lie in (0, 1], got {}", self.plateau_factor));
        }
        Ok(())
    }

    fn schedule(&self) -> PlateauSchedule {
        PlateauSchedule::new(
            self.learning_rate,
            self.plateau_factor,
            self.plateau_patience,
            self.min_learning_rate.min(self.learning_rate),
            1e-4,
        )
    }
}

/// Seeded shuffle of `0..n` split into `(train, validation)`. Validation
/// gets `round(n * fraction)` cases, at least one, leaving at least one for
/// training.
pub fn split_validation(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), NetError> {
    if n < 2 {
        return Err(NetError::TrainConfig(format!("need at least two cases to split, got {n}")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(NetError::TrainConfig(format!("validation fraction must lie in (0, 1), got {fraction}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,lr\n");
        for r in &self.epochs {
            s.push_str(&format!("{},{:.8},{:.8},{:e}\n", r.epoch, r.train_loss, r.val_loss, r.lr));
        }
        s
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs
            .iter()
            .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub net: Hed3DNet,
    pub history: History,
    pub best_epoch: usize,
}

fn batch_of(source: &dyn SampleSource, idx: &[usize]) -> Result<(Tensor5, Tensor5), NetError> {
    let mut xs = Vec::with_capacity(idx.len());
    let mut ys = Vec::with_capacity(idx.len());
    for &i in idx {
        let (x, y) = source.sample(i)?;
        xs.push(x);
        ys.push(y);
    }
    Ok((Tensor5::stack(&xs)?, Tensor5::stack(&ys)?))
}

/// Loss over the fused map, or the mean over fused and side maps with deep
/// supervision. Accumulates parameter gradients.
fn loss_and_backward(net: &mut Hed3DNet, x: &Tensor5, y: &Tensor5) -> Result<f64, NetError> {
    let trace = net.forward_trace(x)?;
    let (mut loss, mut g_fused) = weighted_dice_loss(&trace.output.fused, y)?;
    if trace.output.sides.is_empty() {
        net.backward(&trace, &g_fused, None)?;
        return Ok(loss);
    }
    let terms = (trace.output.sides.len() + 1) as f32;
    let mut g_sides = Vec::with_capacity(trace.output.sides.len());
    for side in &trace.output.sides {
        let (l, g) = weighted_dice_loss(side, y)?;
        loss += l;
        g_sides.push(g.map(|v| v / terms));
    }
    g_fused = g_fused.map(|v| v / terms);
    net.backward(&trace, &g_fused, Some(&g_sides))?;
    Ok(loss / terms as f64)
}

/// Mean loss over a set, one sample at a time.
pub fn evaluate_loss(net: &Hed3DNet, set: &dyn SampleSource) -> Result<f64, NetError> {
    let mut total = 0.0;
    for i in 0..set.len() {
        let (x, y) = set.sample(i)?;
        let out = net.forward(&x)?;
        total += weighted_dice_loss(&out.fused, &y)?.0;
    }
    Ok(total / set.len() as f64)
}

pub fn train(
    net: Hed3DNet,
    train_set: &dyn SampleSource,
    val_set: &dyn SampleSource,
    tc: &TrainConfig,
) -> Result<TrainOutcome, NetError> {
    train_with(net, train_set, val_set, tc, |_, _| Ok(()))
}

/// Like [`train`], calling `observer` after each epoch. The observer is
/// told whether this epoch falls on the checkpoint cadence via the record
/// epoch; returning an error aborts training.
pub fn train_with<F>(
    mut net: Hed3DNet,
    train_set: &dyn SampleSource,
    val_set: &dyn SampleSource,
    tc: &TrainConfig,
    mut observer: F,
) -> Result<TrainOutcome, NetError>
where
    F: FnMut(&EpochRecord, &Hed3DNet) -> Result<(), NetError>,
{
    tc.validate()?;
    if train_set.is_empty() {
        return Err(NetError::EmptySet("training"));
    }
    if val_set.is_empty() {
        return Err(NetError::EmptySet("validation"));
    }
    let adam = AdamConfig::default();
    let mut schedule = tc.schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, usize, Vec<Parameter>)> = None;
    net.zero_grad();

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let lr = schedule.lr;
        let mut sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let (x, y) = batch_of(train_set, chunk)?;
            let loss = loss_and_backward(&mut net, &x, &y)?;
            if !loss.is_finite() {
                return Err(NetError::NonFiniteLoss { epoch, batch: b });
            }
            adam_step(net.parameters_mut().iter_mut(), lr, &adam)?;
            net.zero_grad();
            sum += loss;
            batches += 1;
        }
        let val_loss = evaluate_loss(&net, val_set)?;
        if !val_loss.is_finite() {
            return Err(NetError::NonFiniteLoss { epoch, batch: usize::MAX });
        }
        let record = EpochRecord {
            epoch,
            train_loss: sum / batches as f64,
            val_loss,
            lr,
        };
        history.epochs.push(record);
        if best.as_ref().map_or(true, |(v, _, _)| val_loss < *v) {
            best = Some((val_loss, epoch, net.parameters().to_vec()));
        }
        schedule.step(val_loss);
        observer(&record, &net)?;
    }

    let (best_epoch, net) = match best {
        Some((_, e, params)) => (e, Hed3DNet::from_parameters(net.config().clone(), params)?),
        None => (0, net),
    };
    Ok(TrainOutcome {
        net,
        history,
        best_epoch,
    })
}
