use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::estimator::{Gradients, LabeledData, ModelConfig, Normalization, PosteriorEstimator, Prepared};
use super::layers::cast;
use super::Real;
use crate::error::{HemoError, Result};
use crate::population::subject_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub split: [f64; 3],
    /// Stop after this many epochs without a new best validation loss.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-6,
            batch_size: 100,
            epochs: 500,
            split: [0.7, 0.1, 0.2],
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(HemoError::domain("npe", "need positive learning rate, batch size and epochs, and non-negative weight decay"));
        }
        if self.split.iter().any(|f| *f < 0.0) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(HemoError::domain("npe", format!("split {:?} must sum to 1", self.split)));
        }
        Ok(())
    }
}

/// Adam with L2 weight decay added to the gradient.
pub struct Adam<T> {
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(shapes: &[usize], lr: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [T]>, grads: Vec<&[T]>) {
        self.t += 1;
        let (b1, b2): (T, T) = (cast(self.beta1), cast(self.beta2));
        let one = T::one();
        let c1: T = cast(1.0 - self.beta1.powi(self.t));
        let c2: T = cast(1.0 - self.beta2.powi(self.t));
        let (lr, eps, wd): (T, T, T) = (cast(self.lr), cast(self.eps), cast(self.weight_decay));
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g[i] + wd * p[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] = p[i] - lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean NLL per epoch over training batches, in normalized units (nats).
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    /// Zero-based epoch of the returned checkpoint; `None` when no epoch
    /// improved on the initial weights.
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    pub epochs_run: usize,
}

fn check_finite(loss: f64, batch: &Prepared<impl Real>) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(HemoError::NonFiniteLoss { indices: batch.ids.iter().map(|&i| i as usize).collect() })
    }
}

/// Which parameters an optimization run may change.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Trainable {
    All,
    EncoderOnly,
}

fn apply_update<T: Real>(est: &mut PosteriorEstimator<T>, opt: &mut Adam<T>, grad: &Gradients<T>, what: Trainable) {
    match what {
        Trainable::All => opt.step(est.params_mut(), grad.params()),
        Trainable::EncoderOnly => opt.step(est.encoder.params_mut(), grad.encoder.params()),
    }
}

/// Shared epoch loop. `extra` is a second labeled set whose batches are added
/// to every step's loss with equal weight (the hybrid objective).
fn optimize<T: Real>(
    est: &mut PosteriorEstimator<T>,
    train: &Prepared<T>,
    extra: Option<&Prepared<T>>,
    val: &Prepared<T>,
    tc: &TrainConfig,
    seed: u64,
    what: Trainable,
) -> Result<TrainReport> {
    tc.validate()?;
    if train.is_empty() {
        return Err(HemoError::domain("npe", "empty training set"));
    }
    let shapes: Vec<usize> = match what {
        Trainable::All => est.params().iter().map(|p| p.len()).collect(),
        Trainable::EncoderOnly => est.encoder.params().iter().map(|p| p.len()).collect(),
    };
    let mut opt = Adam::new(&shapes, tc.learning_rate, tc.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(subject_seed(seed, 1));
    let chunk = 500;
    // With no validation set, selection falls back to the training loss.
    let selection = |est: &PosteriorEstimator<T>| {
        if val.is_empty() {
            est.mean_nll(train, chunk)
        } else {
            est.mean_nll(val, chunk) + extra.map_or(0.0, |e| est.mean_nll(e, chunk))
        }
    };

    let mut report = TrainReport {
        initial_train_loss: est.mean_nll(train, chunk),
        initial_val_loss: selection(est),
        ..Default::default()
    };
    let mut best = est.clone();
    report.best_val_loss = report.initial_val_loss;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut extra_order: Vec<usize> = extra.map_or(Vec::new(), |e| (0..e.len()).collect());
    let mut extra_pos = 0;

    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for idx in order.chunks(tc.batch_size) {
            let batch = train.rows(idx);
            let mut grad = est.zero_gradients();
            let mut loss = est.loss_and_grad(&batch, &mut grad, true).to_f64().unwrap();
            check_finite(loss, &batch)?;
            if let Some(e) = extra.filter(|e| !e.is_empty()) {
                let take = tc.batch_size.min(e.len());
                let mut rows = Vec::with_capacity(take);
                for _ in 0..take {
                    if extra_pos == 0 {
                        extra_order.shuffle(&mut rng);
                    }
                    rows.push(extra_order[extra_pos]);
                    extra_pos = (extra_pos + 1) % e.len();
                }
                let eb = e.rows(&rows);
                let l2 = est.loss_and_grad(&eb, &mut grad, true).to_f64().unwrap();
                check_finite(l2, &eb)?;
                loss += l2;
            }
            apply_update(est, &mut opt, &grad, what);
            epoch_loss += loss;
            batches += 1;
        }
        report.train_loss.push(epoch_loss / batches as f64);
        let v = selection(est);
        report.val_loss.push(v);
        report.epochs_run = epoch + 1;
        if v < report.best_val_loss {
            report.best_val_loss = v;
            report.best_epoch = Some(epoch);
            best = est.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if tc.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    *est = best;
    Ok(report)
}

/// Fit normalization on `train`, initialize from `seed` and minimize the
/// mean negative log-likelihood. Returns the checkpoint with the lowest
/// validation loss.
pub fn train<T: Real>(
    train: &LabeledData,
    val: &LabeledData,
    model: &ModelConfig,
    tc: &TrainConfig,
    seed: u64,
) -> Result<(PosteriorEstimator<T>, TrainReport)> {
    let norm = Normalization::fit(train)?;
    let mut est = PosteriorEstimator::new(model, norm, seed)?;
    est.train_config = Some(tc.clone());
    let tr = est.prepare(train)?;
    let va = est.prepare(val)?;
    let report = optimize(&mut est, &tr, None, &va, tc, seed, Trainable::All)?;
    Ok((est, report))
}

/// Hybrid fine-tuning: minimize synthetic NLL plus calibration NLL with the
/// flow frozen. Normalization statistics are kept from the original
/// training set.
pub fn finetune_hybrid<T: Real>(
    est: &PosteriorEstimator<T>,
    calibration: &LabeledData,
    synthetic: &LabeledData,
    synthetic_val: &LabeledData,
    tc: &TrainConfig,
    seed: u64,
) -> Result<(PosteriorEstimator<T>, TrainReport)> {
    let mut out = est.clone();
    let syn = out.prepare(synthetic)?;
    let cal = out.prepare(calibration)?;
    let val = out.prepare(synthetic_val)?;
    let report = optimize(&mut out, &syn, Some(&cal), &val, tc, seed, Trainable::EncoderOnly)?;
    out.train_config = Some(tc.clone());
    Ok((out, report))
}

/// Loss function used by training, exposed for gradient checks: mean NLL
/// over `data` in normalized units.
pub fn batch_loss<T: Real>(est: &PosteriorEstimator<T>, data: &Prepared<T>) -> f64 {
    est.mean_nll(data, usize::MAX)
}
