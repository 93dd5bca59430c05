//! Mini-batch plumbing shared by every training loop in the crate.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{accuracy, cross_entropy, one_hot};
use super::matrix::Matrix;
use super::mlp::{Grad, Mlp, Mode};
use super::optim::{sgd_step, OptState};
use crate::error::{Error, Result};
use crate::rng::{rng_from, tag};

/// Hyper-parameters of a supervised classification fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without a validation-accuracy improvement before stopping.
    pub patience: usize,
    /// Rescale any mini-batch gradient whose L2 norm exceeds this.
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 40,
            batch_size: 32,
            patience: 10,
            max_grad_norm: Some(5.0),
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, n_train: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > n_train.max(1) {
            return Err(Error::config(format!(
                "batch size {} must be in 1..={n_train}",
                self.batch_size
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "learning rate must be finite and non-negative",
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Epoch-wise permutation of `0..n` cut into mini-batches.
pub fn shuffled_batches<R: Rng + ?Sized>(
    n: usize,
    batch_size: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

/// Scales `grads` jointly so their combined norm is at most `max_norm`.
pub fn clip_joint(grads: &mut [&mut Grad], max_norm: Option<f64>) {
    let Some(max_norm) = max_norm else { return };
    let norm = grads.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale(s);
        }
    }
}

/// Tracks the best validation accuracy seen so far and the matching snapshot.
#[derive(Debug, Clone)]
pub struct EarlyStopping<T> {
    patience: usize,
    best_acc: f64,
    best_epoch: Option<usize>,
    best: Option<T>,
    stale: usize,
}

impl<T> EarlyStopping<T> {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_acc: f64::NEG_INFINITY,
            best_epoch: None,
            best: None,
            stale: 0,
        }
    }

    /// Records an epoch; returns `true` when training should stop.
    pub fn observe(&mut self, epoch: usize, acc: f64, snapshot: impl FnOnce() -> T) -> bool {
        if acc > self.best_acc {
            self.best_acc = acc;
            self.best_epoch = Some(epoch);
            self.best = Some(snapshot());
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_snapshot(&self) -> Option<&T> {
        self.best.as_ref()
    }

    pub fn into_best(self) -> Option<T> {
        self.best
    }
}

/// Per-epoch record of a plain classification fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub valid_loss: f64,
    pub valid_acc: f64,
}

/// Labelled inputs for a classifier.
#[derive(Debug, Clone, Copy)]
pub struct LabeledInputs<'a> {
    pub inputs: &'a Matrix,
    pub labels: &'a [u8],
}

impl<'a> LabeledInputs<'a> {
    pub fn new(inputs: &'a Matrix, labels: &'a [u8]) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }
}

/// Mean cross-entropy and accuracy of a softmax classifier in eval mode.
pub fn evaluate_classifier(net: &Mlp, data: LabeledInputs<'_>) -> Result<(f64, f64)> {
    if data.labels.is_empty() {
        return Ok((0.0, 0.0));
    }
    let probs = net.predict(data.inputs)?;
    let ce = cross_entropy(&probs, &one_hot(data.labels))?.value;
    Ok((ce, accuracy(&probs, data.labels)))
}

/// Cross-entropy training of a softmax classifier on hard labels with early
/// stopping on validation accuracy. Returns the best-validation snapshot.
///
/// The shuffle stream is seeded by `(seed, SHUFFLE)` and the dropout stream by
/// `(seed, DROPOUT, stream_tag)`, matching the co-distillation loop.
pub fn fit_classifier(
    mut net: Mlp,
    train: LabeledInputs<'_>,
    valid: LabeledInputs<'_>,
    cfg: &FitConfig,
    stream_tag: u64,
    name: &str,
) -> Result<(Mlp, Vec<EpochRecord>)> {
    cfg.validate(train.labels.len())?;
    if train.labels.is_empty() {
        return Err(Error::invalid("empty training split"));
    }
    let mut opt = OptState::new(cfg.learning_rate, cfg.momentum)?;
    let mut shuffle_rng = rng_from(&[cfg.seed, tag::SHUFFLE]);
    let mut dropout_rng = rng_from(&[cfg.seed, tag::DROPOUT, stream_tag]);
    let targets = one_hot(train.labels);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut stopper = EarlyStopping::new(cfg.patience);

    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for batch in shuffled_batches(train.labels.len(), cfg.batch_size, &mut shuffle_rng) {
            let x = train.inputs.select_rows(&batch);
            let t = targets.select_rows(&batch);
            let cache = net.forward(&x, Mode::Train(&mut dropout_rng))?;
            let out = cache.output();
            let lg = cross_entropy(out, &t)?;
            if !lg.value.is_finite() {
                return Err(Error::Training {
                    network: name.to_owned(),
                    epoch,
                    reason: "non-finite loss".into(),
                });
            }
            loss_sum += lg.value * batch.len() as f64;
            hits += (0..batch.len())
                .filter(|&r| super::loss::predicted_label(out.row(r)) == train.labels[batch[r]])
                .count();
            let mut grad = net.backward(&cache, &lg.grad)?;
            clip_joint(&mut [&mut grad], cfg.max_grad_norm);
            sgd_step(&mut net, &grad, &mut opt).map_err(|e| Error::Training {
                network: name.to_owned(),
                epoch,
                reason: e.to_string(),
            })?;
        }
        let n = train.labels.len() as f64;
        let (valid_loss, valid_acc) = evaluate_classifier(&net, valid)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: hits as f64 / n,
            valid_loss,
            valid_acc,
        });
        // without a validation split every epoch runs and the last one is kept
        if !valid.labels.is_empty() && stopper.observe(epoch, valid_acc, || net.clone()) {
            break;
        }
    }
    let best = stopper.into_best().unwrap_or(net);
    Ok((best, history))
}
