//! Teacher-forced training with validation-based model selection, early
//! stopping, seeded splits and single-file checkpoints.

mod checkpoint;
mod optim;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use optim::{clip_grad_norm, Optimizer, OptimizerKind};

use crate::corpus::PreparedExample;
use crate::models::{EncodedExample, LossParts, Model, ModelError};
use crate::tensor::{ParamStore, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training configuration error: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint format version {found} is not supported (expected {supported})")]
    Version { found: u64, supported: u32 },
    #[error("vocabulary fingerprint mismatch: expected {expected}, checkpoint has {found}")]
    Fingerprint { expected: String, found: String },
    #[error("training diverged (non-finite loss) in epoch {epoch}, batch {batch}")]
    Diverged {
        epoch: usize,
        batch: usize,
        /// Parameters at the end of the last completed epoch.
        last_good: Box<Checkpoint>,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// Global gradient-norm limit; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    /// Stop after this many epochs without a new best validation loss.
    pub patience: Option<usize>,
    /// Fraction of the examples held out by [`train`].
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            clip_norm: 5.0,
            seed: 42,
            patience: Some(5),
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.clip_norm.is_finite() && self.clip_norm >= 0.0) {
            return bad("clip norm must be non-negative");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("validation fraction must lie strictly between 0 and 1");
        }
        if self.patience == Some(0) {
            return bad("patience must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Token-mean loss over the epoch's batches, measured before each update.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    NoImprovement,
    Stop,
}

/// Tracks the best loss seen and counts non-improving epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: Option<usize>,
    best: f64,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: Option<usize>) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
            return StopDecision::Improved;
        }
        self.bad_epochs += 1;
        match self.patience {
            Some(p) if self.bad_epochs >= p => StopDecision::Stop,
            _ => StopDecision::NoImprovement,
        }
    }
}

/// Seeded shuffle, then the first `floor(fraction · N)` examples train and
/// the rest validate.
pub fn split_train_val<T: Clone>(examples: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(TrainError::Config(format!("split fraction {fraction} must lie strictly between 0 and 1")));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((fraction * examples.len() as f64) + 1e-9).floor() as usize;
    let pick = |ids: &[usize]| ids.iter().map(|&i| examples[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The model holding the best-validation parameters.
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn lambda(model: &Model) -> f64 {
    if model.config.use_coverage {
        model.config.coverage_weight
    } else {
        0.0
    }
}

fn objective(model: &Model, p: &LossParts) -> f64 {
    p.nll + lambda(model) * p.coverage
}

/// Token-mean loss of `examples`, computed in parallel and summed in order.
pub fn evaluate_loss(model: &Model, examples: &[EncodedExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(TrainError::Config("no examples to evaluate".into()));
    }
    let parts = examples
        .par_iter()
        .map(|ex| model.loss_graph(ex, None).map(|(_, _, p)| p))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let (loss, tokens) = parts
        .iter()
        .fold((0.0, 0usize), |(l, t), p| (l + objective(model, p), t + p.tokens));
    Ok(loss / tokens as f64)
}

/// Groups examples of similar source length: a seeded shuffle, a stable
/// sort by length, fixed-size chunks, then a shuffle of the chunk order.
pub fn make_batches(lengths: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| lengths[i]);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

fn diverged(model: &Model, last_good: &ParamStore, history: &[EpochRecord], epoch: usize, batch: usize) -> TrainError {
    let mut good = model.clone();
    good.params = last_good.clone();
    TrainError::Diverged {
        epoch,
        batch,
        last_good: Box::new(Checkpoint::from_model(&good, history.to_vec())),
    }
}

/// Holds out `cfg.val_fraction` of `examples` and trains on the rest.
pub fn train(model: Model, examples: &[PreparedExample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (tr, val) = split_train_val(examples, 1.0 - cfg.val_fraction, cfg.seed)?;
    train_with_validation(model, &tr, &val, cfg, |_| {})
}

/// Trains on `train_set`, selecting parameters by loss on `val_set` (or by
/// training loss when `val_set` is empty). `on_epoch` sees each record as
/// it is produced.
pub fn train_with_validation(
    mut model: Model,
    train_set: &[PreparedExample],
    val_set: &[PreparedExample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let enc_train: Vec<EncodedExample> = train_set.iter().map(|e| model.encode_example(e)).collect();
    let enc_val: Vec<EncodedExample> = val_set.iter().map(|e| model.encode_example(e)).collect();
    let lengths: Vec<usize> = enc_train.iter().map(EncodedExample::len).collect();

    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr, &model.params);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = Vec::new();
    let mut best_params = model.params.clone();
    let mut best_epoch = 0;
    let mut last_good = model.params.clone();
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let batches = make_batches(&lengths, cfg.batch_size, &mut rng);
        let (mut epoch_loss, mut epoch_tokens) = (0.0, 0usize);
        for (b, batch) in batches.iter().enumerate() {
            let results = batch
                .par_iter()
                .map(|&i| {
                    let dropout_seed = (model.config.dropout > 0.0)
                        .then_some(cfg.seed ^ ((epoch as u64) << 40) ^ ((b as u64) << 20) ^ i as u64);
                    model.example_gradients(&enc_train[i], dropout_seed)
                })
                .collect::<std::result::Result<Vec<_>, _>>();
            let results = match results {
                Ok(r) => r,
                Err(ModelError::Tensor(TensorError::NonFinite(_))) => {
                    return Err(diverged(&model, &last_good, &history, epoch, b))
                }
                Err(e) => return Err(e.into()),
            };
            let tokens: usize = results.iter().map(|(p, _)| p.tokens).sum();
            let loss: f64 = results.iter().map(|(p, _)| objective(&model, p)).sum();
            if !loss.is_finite() {
                return Err(diverged(&model, &last_good, &history, epoch, b));
            }
            model.params.zero_grads();
            let scale = 1.0 / tokens as f64;
            for (_, g) in &results {
                g.accumulate_into(&mut model.params, scale);
            }
            let norm = clip_grad_norm(&mut model.params, cfg.clip_norm);
            if !norm.is_finite() {
                return Err(diverged(&model, &last_good, &history, epoch, b));
            }
            optimizer.update(&mut model.params);
            epoch_loss += loss;
            epoch_tokens += tokens;
        }
        let train_loss = epoch_loss / epoch_tokens as f64;
        let val_loss = if enc_val.is_empty() {
            None
        } else {
            match evaluate_loss(&model, &enc_val) {
                Ok(l) => Some(l),
                Err(TrainError::Model(ModelError::Tensor(TensorError::NonFinite(_)))) => Some(f64::NAN),
                Err(e) => return Err(e),
            }
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
        };
        history.push(record);
        on_epoch(&record);
        let selection = val_loss.unwrap_or(train_loss);
        if !selection.is_finite() {
            return Err(diverged(&model, &last_good, &history, epoch, batches.len()));
        }
        last_good = model.params.clone();
        match stopper.observe(selection) {
            StopDecision::Improved => {
                best_params = model.params.clone();
                best_epoch = epoch;
            }
            StopDecision::NoImprovement => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    model.params = best_params;
    model.params.zero_grads();
    let checkpoint = Checkpoint::from_model(&model, history.clone());
    Ok(TrainOutcome {
        model,
        checkpoint,
        history,
        best_epoch,
        stopped_early,
    })
}
