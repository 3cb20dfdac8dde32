//! Behaviour cloning: cross-entropy against expert labels, AdamW, cosine
//! annealing, k-fold cross-validation followed by a full-data fit.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{argmax, backward_batch, cross_entropy, forward_batch, tokens_of, Dropout};
use super::{Action, ModelConfig, PolicyError, PolicyWeights, SegmentState};

/// Samples pushed through forward/backward at once; bounds activation memory.
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Cross-validation folds before the full fit; 0 or 1 skips CV.
    pub folds: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            dropout: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            folds: 5,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let ok = self.epochs > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.dropout)
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(PolicyError::InvalidConfig(format!("bad hyperparameters {self:?}")))
        }
    }

    /// Cosine annealing from the initial rate towards 0 across the epochs.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        0.5 * self.learning_rate * (1.0 + (PI * epoch as f64 / self.epochs as f64).cos())
    }
}

/// One row of the training log. `fold` is `None` for the full-data fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub fold: Option<usize>,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: PolicyWeights,
    pub log: Vec<TrainLogRow>,
    /// Final validation accuracy of each CV fold.
    pub fold_accuracy: Vec<f64>,
}

impl TrainOutcome {
    pub fn mean_cv_accuracy(&self) -> Option<f64> {
        (!self.fold_accuracy.is_empty()).then(|| self.fold_accuracy.iter().sum::<f64>() / self.fold_accuracy.len() as f64)
    }
}

pub fn write_train_log(path: &Path, rows: &[TrainLogRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn flatten(w: &PolicyWeights) -> Vec<f64> {
    let mut out = Vec::with_capacity(w.param_count());
    w.for_each(|t| out.extend_from_slice(t.data));
    out
}

fn unflatten(w: &mut PolicyWeights, flat: &[f64]) {
    let mut k = 0;
    w.for_each_mut(|t| {
        let n = t.data.len();
        t.data.copy_from_slice(&flat[k..k + n]);
        k += n;
    });
}

/// AdamW with decoupled decay applied to matrices only.
struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    decay: Vec<bool>,
    step: i32,
}

impl AdamW {
    fn new(w: &mut PolicyWeights) -> Self {
        let n = w.param_count();
        let mut decay = Vec::with_capacity(n);
        w.for_each_mut(|t| decay.extend(std::iter::repeat(t.is_matrix()).take(t.data.len())));
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            decay,
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64, h: &Hyperparams) {
        self.step += 1;
        let bc1 = 1.0 - h.beta1.powi(self.step);
        let bc2 = 1.0 - h.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = h.beta1 * self.m[i] + (1.0 - h.beta1) * g;
            self.v[i] = h.beta2 * self.v[i] + (1.0 - h.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            if self.decay[i] {
                params[i] -= lr * h.weight_decay * params[i];
            }
            params[i] -= lr * m_hat / (v_hat.sqrt() + h.adam_eps);
        }
    }
}

/// Logits for many states, computed in chunks with dropout off.
pub fn predict_logits(w: &PolicyWeights, states: &[&SegmentState]) -> Array2<f64> {
    let mut out = Array2::zeros((states.len(), Action::COUNT));
    for (c, chunk) in states.chunks(CHUNK).enumerate() {
        let cache = forward_batch(w, tokens_of(chunk.iter().copied()).view(), None);
        out.slice_mut(ndarray::s![c * CHUNK..c * CHUNK + chunk.len(), ..]).assign(&cache.logits);
    }
    out
}

pub fn predict(w: &PolicyWeights, states: &[&SegmentState]) -> Vec<Action> {
    predict_logits(w, states)
        .rows()
        .into_iter()
        .map(|r| Action::from_index(argmax(r.as_slice().expect("row-major"))).expect("four logits"))
        .collect()
}

/// Fraction of samples whose predicted action equals the label.
pub fn accuracy(w: &PolicyWeights, samples: &[(SegmentState, Action)]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let states: Vec<&SegmentState> = samples.iter().map(|(s, _)| s).collect();
    let hits = predict(w, &states).iter().zip(samples).filter(|(p, (_, y))| *p == y).count();
    hits as f64 / samples.len() as f64
}

fn check_dataset(dataset: &[(SegmentState, Action)], model: &ModelConfig) -> Result<(), PolicyError> {
    if dataset.is_empty() {
        return Err(PolicyError::EmptyDataset);
    }
    if let Some((s, _)) = dataset.iter().find(|(s, _)| s.h.len() != model.seq_len) {
        return Err(PolicyError::ShapeMismatch(format!(
            "model expects {} steps, sample has {}",
            model.seq_len,
            s.h.len()
        )));
    }
    Ok(())
}

/// Trains one model on `train`, logging each epoch and, when given,
/// accuracy on `val`.
fn fit(
    train: &[(SegmentState, Action)],
    val: Option<&[(SegmentState, Action)]>,
    fold: Option<usize>,
    model: &ModelConfig,
    h: &Hyperparams,
    log: &mut Vec<TrainLogRow>,
) -> Result<PolicyWeights, PolicyError> {
    let fold_salt = fold.map_or(0, |f| f as u64 + 1);
    let mut weights = PolicyWeights::init(model, h.seed ^ fold_salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))?;
    let mut rng = ChaCha8Rng::seed_from_u64(h.seed.wrapping_add(fold_salt));
    let mut opt = AdamW::new(&mut weights);
    let mut params = flatten(&weights);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..h.epochs {
        let lr = h.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(h.batch_size) {
            let mut grads = weights.zeros_like();
            for chunk in batch.chunks(CHUNK) {
                let tokens = tokens_of(chunk.iter().map(|&i| &train[i].0));
                let labels: Vec<usize> = chunk.iter().map(|&i| train[i].1.index()).collect();
                let dropout = Dropout { rate: h.dropout, rng: &mut rng };
                let cache = forward_batch(&weights, tokens.view(), Some(dropout));
                let (loss, dlogits) = cross_entropy(&cache.logits, &labels);
                if !loss.is_finite() {
                    return Err(PolicyError::DivergedLoss { epoch });
                }
                let share = chunk.len() as f64 / batch.len() as f64;
                loss_sum += loss * chunk.len() as f64;
                backward_batch(&weights, &cache, &(dlogits * share), &mut grads);
            }
            opt.update(&mut params, &flatten(&grads), lr, h);
            unflatten(&mut weights, &params);
        }
        let train_loss = loss_sum / train.len() as f64;
        if !train_loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(PolicyError::DivergedLoss { epoch });
        }
        let val_accuracy = val.map(|v| accuracy(&weights, v));
        log::debug!("fold {fold:?} epoch {epoch}: loss {train_loss:.4} val {val_accuracy:?} lr {lr:.2e}");
        log.push(TrainLogRow {
            epoch,
            fold,
            train_loss,
            val_accuracy,
            learning_rate: lr,
        });
    }
    Ok(weights)
}

/// Seeded k-fold split of sample indices into (train, validation) pairs.
pub fn fold_indices(n: usize, folds: usize, seed: u64) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (0..folds)
        .map(|f| {
            let lo = f * n / folds;
            let hi = (f + 1) * n / folds;
            let val = idx[lo..hi].to_vec();
            let train = idx[..lo].iter().chain(&idx[hi..]).copied().collect();
            (train, val)
        })
        .collect()
}

/// Cross-validates (when `folds >= 2` and there are enough samples), then fits
/// on the full dataset and returns those weights.
pub fn train(dataset: &[(SegmentState, Action)], model: &ModelConfig, h: &Hyperparams) -> Result<TrainOutcome, PolicyError> {
    h.validate()?;
    model.validate()?;
    check_dataset(dataset, model)?;
    let mut log = Vec::new();
    let mut fold_accuracy = Vec::new();
    if h.folds >= 2 && dataset.len() >= h.folds {
        for (f, (tr, va)) in fold_indices(dataset.len(), h.folds, h.seed).into_iter().enumerate() {
            let pick = |ix: &[usize]| ix.iter().map(|&i| dataset[i].clone()).collect::<Vec<_>>();
            let (tr, va) = (pick(&tr), pick(&va));
            let w = fit(&tr, Some(&va), Some(f), model, h, &mut log)?;
            let acc = accuracy(&w, &va);
            log::info!("fold {f}: validation accuracy {acc:.3}");
            fold_accuracy.push(acc);
        }
    }
    let weights = fit(dataset, None, None, model, h, &mut log)?;
    Ok(TrainOutcome {
        weights,
        log,
        fold_accuracy,
    })
}
