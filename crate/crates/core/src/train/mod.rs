//! Mini-batch Adam on mean cross-entropy, evaluation, and experiment grids.
//!
//! Per-sample forward/backward passes within a batch may run in parallel;
//! their gradients are always summed in batch order, so both execution
//! modes produce bitwise-identical parameters.

pub mod experiment;
mod metrics;

use serde::{Deserialize, Serialize};

pub use metrics::{metrics, ConfusionMatrix, Metrics};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::exec::{self, Mode};
use crate::model::{IfModel, SampleWindow};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                problems.push(format!("{name} {b} must be in [0, 1)"));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            problems.push(format!("eps {} must be > 0", self.eps));
        }
        if self.epochs == 0 {
            problems.push("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                problems.push(format!("clip_norm {c} must be > 0"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, tc: &TrainConfig) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Adam {
            lr: tc.learning_rate,
            beta1: tc.beta1,
            beta2: tc.beta2,
            eps: tc.eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update from the gradients held in `store`.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, p) in store.iter_mut().enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let g = p.grad.data();
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                *w -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    /// Training accuracy of the pre-update predictions.
    pub train_oa: f64,
}

/// Sample order for an epoch, fixed by `(seed, epoch)` alone.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut rng::seeded(rng::derive(seed, epoch as u64)), &mut idx);
    idx
}

fn global_norm(store: &ParamStore) -> f64 {
    store
        .iter()
        .map(|(_, p)| p.grad.data().iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

fn diagnostics(model: &IfModel, epoch: usize, batch: &[usize], cause: &str) -> Error {
    let mut norms: Vec<(f64, &str)> = model
        .params
        .iter()
        .map(|(_, p)| (p.value.norm(), p.name.as_str()))
        .collect();
    norms.sort_by(|a, b| b.0.total_cmp(&a.0));
    let top: Vec<String> = norms.iter().take(5).map(|(n, name)| format!("{name}={n:.4e}")).collect();
    Error::Numeric(format!(
        "{cause} in epoch {epoch}; batch sample ids {batch:?}; largest parameter norms: {}",
        top.join(", ")
    ))
}

/// Trains in place. `on_epoch` sees each log line as it is produced.
pub fn train_with(
    model: &mut IfModel,
    samples: &[SampleWindow],
    tc: &TrainConfig,
    mode: Mode,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    tc.validate()?;
    if samples.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    for s in samples {
        model.arch.check_sample(s)?;
    }
    let mut opt = Adam::new(&model.params, tc);
    let mut log = Vec::with_capacity(tc.epochs);
    for epoch in 0..tc.epochs {
        let order = epoch_order(samples.len(), tc.seed, epoch);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(tc.batch_size) {
            let results = exec::map_slice(mode, batch, |&i| model.loss_grad(&samples[i]));
            model.params.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for (r, &i) in results.into_iter().zip(batch) {
                let (loss, logits, grads) = match r {
                    Ok(v) => v,
                    Err(e) if e.is_numeric() => return Err(diagnostics(model, epoch, batch, &e.to_string())),
                    Err(e) => return Err(e),
                };
                batch_loss += loss;
                correct += usize::from(logits.argmax() == samples[i].label);
                model.params.accumulate(&grads, scale);
            }
            if !batch_loss.is_finite() {
                return Err(diagnostics(model, epoch, batch, "non-finite loss"));
            }
            loss_sum += batch_loss;
            if let Some(max) = tc.clip_norm {
                let norm = global_norm(&model.params);
                if norm > max {
                    let k = max / norm;
                    for p in model.params.iter_mut() {
                        p.grad.data_mut().iter_mut().for_each(|g| *g *= k);
                    }
                }
            }
            opt.step(&mut model.params);
        }
        let entry = EpochLog {
            epoch,
            loss: loss_sum / samples.len() as f64,
            train_oa: correct as f64 / samples.len() as f64,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(log)
}

pub fn train(model: &mut IfModel, samples: &[SampleWindow], tc: &TrainConfig, mode: Mode) -> Result<Vec<EpochLog>> {
    train_with(model, samples, tc, mode, |_| {})
}

pub fn predict_all(model: &IfModel, samples: &[SampleWindow], mode: Mode) -> Result<Vec<usize>> {
    exec::map_slice(mode, samples, |s| model.predict(s)).into_iter().collect()
}

pub fn evaluate(model: &IfModel, samples: &[SampleWindow], mode: Mode) -> Result<ConfusionMatrix> {
    if samples.is_empty() {
        return Err(Error::Contract("empty evaluation set".into()));
    }
    let preds = predict_all(model, samples, mode)?;
    ConfusionMatrix::from_pairs(
        model.cfg().num_classes,
        samples.iter().zip(preds).map(|(s, p)| (s.label, p)),
    )
}

/// One JSON object per line.
pub fn log_jsonl(log: &[EpochLog]) -> String {
    log.iter()
        .map(|e| serde_json::to_string(e).expect("log serializes") + "\n")
        .collect()
}
