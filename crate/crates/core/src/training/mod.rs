//! Losses, optimisers and the mini-batch training loop.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SamplePair;
use crate::layers::Mode;
use crate::model::{mix_seed, ModelError, SequenceModel};
use crate::tensor::{no_grad, Scalar, Tensor, TensorError};

mod loss;
mod optim;

pub use loss::{cross_entropy_loss, mse_loss, PRED_CLAMP};
pub use optim::{AdamParams, AdamState, NesterovSgdState, Optimizer, SgdParams};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite loss or gradient at epoch {epoch}, batch {batch} (step {step}); {norms}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        step: u64,
        norms: String,
    },
    #[error("{0}")]
    Callback(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

impl LossKind {
    pub fn apply<S: Scalar>(self, pred: &Tensor<S>, target: &Tensor<S>) -> std::result::Result<Tensor<S>, TensorError> {
        match self {
            LossKind::CrossEntropy => cross_entropy_loss(pred, target),
            LossKind::Mse => mse_loss(pred, target),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    SgdNesterov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub adam: AdamParams,
    pub sgd: SgdParams,
    pub seed: u64,
    /// Epochs between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Epochs without validation improvement before stopping; 0 never stops.
    pub patience: usize,
    /// Share of the training pairs held out for validation.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 100,
            loss: LossKind::CrossEntropy,
            optimizer: OptimizerKind::Adam,
            adam: AdamParams::default(),
            sgd: SgdParams::default(),
            seed: 0,
            checkpoint_every: 10,
            patience: 10,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        let a = &self.adam;
        if !(a.lr >= 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
            return bad("adam needs lr >= 0, betas in [0, 1) and epsilon > 0");
        }
        if !(self.sgd.lr >= 0.0) || !(0.0..1.0).contains(&self.sgd.momentum) {
            return bad("sgd needs lr >= 0 and momentum in [0, 1)");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

enum AnyOptimizer {
    Adam(AdamState),
    Sgd(NesterovSgdState),
}

impl Optimizer for AnyOptimizer {
    fn begin_step(&mut self) {
        match self {
            AnyOptimizer::Adam(o) => o.begin_step(),
            AnyOptimizer::Sgd(o) => o.begin_step(),
        }
    }

    fn update(&mut self, index: usize, theta: &mut [f64], grad: &[f64]) {
        match self {
            AnyOptimizer::Adam(o) => o.update(index, theta, grad),
            AnyOptimizer::Sgd(o) => o.update(index, theta, grad),
        }
    }
}

/// One row of the loss curve: a training batch, with the validation loss
/// filled in on the last batch of each epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// `step,epoch,train_loss,val_loss,seed`; `val_loss` is empty except on the
/// last batch of an epoch.
pub fn loss_curve_csv(records: &[LossRecord], seed: u64) -> String {
    let mut out = String::from("step,epoch,train_loss,val_loss,seed\n");
    for r in records {
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{seed}", r.step, r.epoch, r.train_loss, val);
    }
    out
}

pub fn write_loss_csv(path: &Path, records: &[LossRecord], seed: u64) -> std::io::Result<()> {
    std::fs::write(path, loss_curve_csv(records, seed))
}

/// Status handed to the per-epoch callback.
pub struct EpochEnd<'a, M> {
    pub epoch: usize,
    pub model: &'a M,
    pub checkpoint_due: bool,
    pub curve: &'a [LossRecord],
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// Best-validation parameters when a validation split exists, otherwise
    /// the final parameters.
    pub model: M,
    pub curve: Vec<LossRecord>,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub stopped_early: bool,
}

/// Stacks pairs into `[n, 1, W]` input and target tensors.
pub fn batch_tensors<S: Scalar>(pairs: &[&SamplePair]) -> Result<(Tensor<S>, Tensor<S>)> {
    let w = pairs.first().map(|p| p.window_length()).ok_or(TrainError::EmptyDataset)?;
    if pairs.iter().any(|p| p.window_length() != w || p.appliance.len() != w) {
        return Err(TrainError::Config("pairs in one batch must share a window length".into()));
    }
    let gather = |f: fn(&SamplePair) -> &[f32]| -> Vec<S> {
        pairs
            .iter()
            .flat_map(|p| f(p).iter().map(|&v| S::from_f64_lossy(v as f64)))
            .collect()
    };
    let shape = [pairs.len(), 1, w];
    Ok((
        Tensor::new(&shape, gather(|p| &p.aggregate))?,
        Tensor::new(&shape, gather(|p| &p.appliance))?,
    ))
}

/// Mean loss over `pairs` in eval mode, without recording a graph.
pub fn dataset_loss<S: Scalar, M: SequenceModel<S>>(
    model: &M,
    pairs: &[&SamplePair],
    loss: LossKind,
    batch_size: usize,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    no_grad(|| {
        let mut total = 0.0;
        for chunk in pairs.chunks(batch_size.max(1)) {
            let (x, y) = batch_tensors::<S>(chunk)?;
            let pred = model.forward(&x, Mode::Eval)?;
            total += loss.apply(&pred, &y)?.item()?.as_f64() * chunk.len() as f64;
        }
        Ok(total / pairs.len() as f64)
    })
}

const SPLIT_SALT: u64 = 0x5eed_0001;
const SHUFFLE_SALT: u64 = 0x5eed_0002;
const DROPOUT_SALT: u64 = 0x5eed_0003;

fn param_norms<S: Scalar, M: SequenceModel<S>>(model: &M) -> String {
    let norms: Vec<(String, f64)> = model
        .parameters()
        .into_iter()
        .map(|(n, t)| (n, t.data().iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt()))
        .collect();
    let total = norms.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    let mut worst = norms.clone();
    worst.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Less).then(a.0.cmp(&b.0)));
    let listed: Vec<String> = worst.iter().take(3).map(|(n, v)| format!("{n}={v:.4e}")).collect();
    format!("parameter L2 norm {total:.4e}; largest: {}", listed.join(", "))
}

/// Loss and gradients for one batch. With `workers > 1` the batch is split
/// into contiguous chunks that run on private parameter copies; gradients
/// are then summed in chunk order.
fn batch_gradients<S: Scalar, M: SequenceModel<S> + Clone>(
    model: &M,
    batch: &[&SamplePair],
    loss: LossKind,
    seed: u64,
    workers: usize,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let run = |m: &M, chunk: &[&SamplePair], seed: u64| -> Result<(f64, Vec<Vec<f64>>)> {
        let (x, y) = batch_tensors::<S>(chunk)?;
        let pred = m.forward(&x, Mode::Train { seed })?;
        let weight = S::from_f64_lossy(chunk.len() as f64 / batch.len() as f64);
        let l = loss.apply(&pred, &y)?.mul_scalar(weight);
        l.backward()?;
        let grads = m
            .parameters()
            .iter()
            .map(|(_, p)| match p.grad() {
                Some(g) => g.iter().map(|v| v.as_f64()).collect(),
                None => vec![0.0; p.numel()],
            })
            .collect();
        Ok((l.item()?.as_f64(), grads))
    };
    let private = |m: &M| {
        let mut local = m.clone();
        for (_, p) in local.parameters_mut() {
            *p = Tensor::variable(p.shape(), p.data().to_vec()).expect("same shape");
        }
        local
    };

    let workers = workers.clamp(1, batch.len());
    if workers == 1 {
        return run(&private(model), batch, seed);
    }
    let chunk = batch.len().div_ceil(workers);
    let results: Vec<Result<(f64, Vec<Vec<f64>>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .enumerate()
            .map(|(i, c)| {
                let local = private(model);
                s.spawn(move || run(&local, c, mix_seed(seed, i as u64)))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut total = 0.0;
    let mut sum: Option<Vec<Vec<f64>>> = None;
    for r in results {
        let (l, g) = r?;
        total += l;
        match sum.as_mut() {
            None => sum = Some(g),
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.iter_mut().zip(b).for_each(|(x, y)| *x += y)),
        }
    }
    Ok((total, sum.expect("at least one chunk")))
}

/// Seeded mini-batch training.
///
/// Pairs are split once into training and validation parts; training pairs
/// are reshuffled every epoch. `on_epoch` runs after each epoch and may
/// persist checkpoints.
pub fn train<S, M, F>(
    model: M,
    pairs: &[SamplePair],
    cfg: &TrainConfig,
    workers: usize,
    mut on_epoch: F,
) -> Result<TrainOutcome<M>>
where
    S: Scalar,
    M: SequenceModel<S> + Clone,
    F: FnMut(EpochEnd<'_, M>) -> Result<()>,
{
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut model = model;
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, SPLIT_SALT)));
    let n_val = if pairs.len() >= 2 && cfg.validation_fraction > 0.0 {
        ((pairs.len() as f64 * cfg.validation_fraction).round() as usize).clamp(1, pairs.len() - 1)
    } else {
        0
    };
    let val: Vec<&SamplePair> = idx[..n_val].iter().map(|&i| &pairs[i]).collect();
    let mut train_idx: Vec<usize> = idx[n_val..].to_vec();
    train_idx.sort_unstable();

    let mut opt = match cfg.optimizer {
        OptimizerKind::Adam => AnyOptimizer::Adam(AdamState::new(cfg.adam)),
        OptimizerKind::SgdNesterov => AnyOptimizer::Sgd(NesterovSgdState::new(cfg.sgd)),
    };
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, SHUFFLE_SALT));
    let mut curve = Vec::new();
    let mut step = 0u64;
    let mut best: Option<(f64, usize, M)> = None;
    let mut stale = 0;
    let mut epochs_run = 0;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut shuffle_rng);
        for (b, chunk) in train_idx.chunks(cfg.batch_size).enumerate() {
            step += 1;
            let batch: Vec<&SamplePair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let seed = mix_seed(mix_seed(cfg.seed, DROPOUT_SALT), step);
            let (loss, grads) = batch_gradients(&model, &batch, cfg.loss, seed, workers)?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: b,
                    step,
                    norms: param_norms(&model),
                });
            }
            let mut params: Vec<&mut Tensor<S>> = model.parameters_mut().into_iter().map(|(_, t)| t).collect();
            opt.step_with(&mut params, &grads)?;
            curve.push(LossRecord {
                step,
                epoch,
                train_loss: loss,
                val_loss: None,
            });
        }
        epochs_run = epoch + 1;

        if !val.is_empty() {
            let v = dataset_loss(&model, &val, cfg.loss, cfg.batch_size)?;
            if let Some(last) = curve.last_mut() {
                last.val_loss = Some(v);
            }
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, model.clone()));
                stale = 0;
            } else {
                stale += 1;
            }
        }
        let last_epoch = epoch + 1 == cfg.epochs;
        stopped_early = cfg.patience > 0 && stale >= cfg.patience && !last_epoch;
        let checkpoint_due = cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0;
        on_epoch(EpochEnd {
            epoch,
            model: &model,
            checkpoint_due,
            curve: &curve,
        })?;
        if stopped_early {
            break;
        }
    }

    let (best_val_loss, best_epoch) = match &best {
        Some((v, e, _)) => (Some(*v), Some(*e)),
        None => (None, None),
    };
    if let Some((_, _, m)) = best {
        model = m;
    }
    Ok(TrainOutcome {
        model,
        curve,
        epochs_run,
        best_epoch,
        best_val_loss,
        stopped_early,
    })
}
