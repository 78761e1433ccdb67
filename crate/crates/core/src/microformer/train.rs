//! Cross-entropy training with Adam, keeping the best-validation-F1 checkpoint.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{backward, check_input, forward_cached};
use super::{ModelInput, ModelParams};
use crate::metric::f1_score;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledInput {
    pub input: ModelInput,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub batch_size: usize,
    /// Share of the dataset held out for checkpoint selection.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 3e-3,
            seed: 0,
            batch_size: 8,
            validation_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub validation_f1: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// 0 means the initial parameters were never beaten.
    pub best_epoch: usize,
    pub best_f1: f64,
    pub history: Vec<EpochStats>,
}

fn log_softmax(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    [logits[0] - lse, logits[1] - lse]
}

/// Loss and logit gradient of one example.
fn example_grad(params: &ModelParams, ex: &LabeledInput) -> Result<(f64, ModelParams)> {
    let (trace, cache) = forward_cached(params, &ex.input)?;
    let lp = log_softmax(trace.logits);
    let y = ex.label as usize;
    let mut dl = [lp[0].exp(), lp[1].exp()];
    dl[y] -= 1.0;
    Ok((-lp[y], backward(params, &cache, dl).0))
}

fn predict_all(params: &ModelParams, data: &[&LabeledInput]) -> Result<(Vec<u8>, f64)> {
    let mut preds = Vec::with_capacity(data.len());
    let mut loss = 0.0;
    for ex in data {
        let t = super::forward(params, &ex.input)?;
        loss -= log_softmax(t.logits)[ex.label as usize];
        preds.push(t.predicted_label);
    }
    Ok((preds, loss / data.len().max(1) as f64))
}

pub fn evaluate_f1(params: &ModelParams, data: &[LabeledInput]) -> Result<f64> {
    let refs: Vec<&LabeledInput> = data.iter().collect();
    let (preds, _) = predict_all(params, &refs)?;
    let labels: Vec<u8> = data.iter().map(|e| e.label).collect();
    f1_score(&preds, &labels)
}

struct Adam {
    m: ModelParams,
    v: ModelParams,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let grads = grads.tensors();
        for (((p, m), v), (_, g)) in params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grads)
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = Self::B1 * m.data[i] + (1.0 - Self::B1) * gi;
                v.data[i] = Self::B2 * v.data[i] + (1.0 - Self::B2) * gi * gi;
                p.data[i] -= lr * (m.data[i] / c1) / ((v.data[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Trains a copy of `params`; deterministic given `cfg.seed`.
///
/// After every epoch the model is scored on a held-out split; the returned
/// parameters are those with the highest validation F1 (lower validation loss
/// breaks ties), the untrained parameters included as epoch 0.
pub fn train_toy(params: &ModelParams, data: &[LabeledInput], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for ex in data {
        check_input(params, &ex.input)?;
        if ex.label > 1 {
            return Err(Error::Invalid(format!("label {} is not 0 or 1", ex.label)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if data.len() < 2 {
        0
    } else {
        ((data.len() as f64 * cfg.validation_fraction).ceil() as usize).clamp(1, data.len() - 1)
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let val: Vec<&LabeledInput> = if val_idx.is_empty() {
        data.iter().collect()
    } else {
        val_idx.iter().map(|&i| &data[i]).collect()
    };
    let val_labels: Vec<u8> = val.iter().map(|e| e.label).collect();
    let mut train_idx = train_idx.to_vec();

    let mut current = params.clone();
    let (preds, val_loss) = predict_all(&current, &val)?;
    let mut best = (f1_score(&preds, &val_labels)?, -val_loss);
    let mut outcome = TrainOutcome {
        params: current.clone(),
        best_epoch: 0,
        best_f1: best.0,
        history: Vec::with_capacity(cfg.epochs),
    };
    let mut adam = Adam {
        m: ModelParams::zeros(params.config),
        v: ModelParams::zeros(params.config),
        t: 0,
    };
    let batch = cfg.batch_size.max(1);
    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut total_loss = 0.0;
        for chunk in train_idx.chunks(batch) {
            let mut acc = ModelParams::zeros(params.config);
            for &i in chunk {
                let (loss, g) = example_grad(&current, &data[i])?;
                total_loss += loss;
                for (a, (_, gi)) in acc.tensors_mut().into_iter().zip(g.tensors()) {
                    for (x, y) in a.data.iter_mut().zip(&gi.data) {
                        *x += y / chunk.len() as f64;
                    }
                }
            }
            adam.step(&mut current, &acc, cfg.learning_rate);
        }
        if !current.is_finite() {
            return Err(Error::Invalid(format!("training diverged in epoch {epoch}")));
        }
        let (preds, val_loss) = predict_all(&current, &val)?;
        let f1 = f1_score(&preds, &val_labels)?;
        outcome.history.push(EpochStats {
            epoch,
            train_loss: total_loss / train_idx.len().max(1) as f64,
            validation_loss: val_loss,
            validation_f1: f1,
        });
        if (f1, -val_loss) > best {
            best = (f1, -val_loss);
            outcome.params = current.clone();
            outcome.best_epoch = epoch;
            outcome.best_f1 = f1;
        }
    }
    Ok(outcome)
}
