//! Cross-entropy training with RMSProp and per-group learning rates.
//!
//! The normalization sublayers train at rates very different from the
//! network weights, so each parameter group carries its own multiplier on
//! the base rate. Batches are drawn with probability inversely proportional
//! to class frequency, so every class is equally represented in expectation
//! regardless of the raw label distribution.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::normalize::Normalizer;
use crate::params::{ParamGroup, ParamStore};
use crate::tape::{Tape, ValueId};
use crate::tensor::{argmax, Tensor};

/// Base learning rate plus per-sublayer multipliers. The effective rate for
/// a parameter is `eta` times its group's multiplier (network weights use
/// `eta` alone).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrGroups {
    pub eta: f64,
    pub eta_a: f64,
    pub eta_b: f64,
    pub eta_c: f64,
}

impl Default for LrGroups {
    fn default() -> Self {
        LrGroups { eta: 1e-4, eta_a: 1.0, eta_b: 1.0, eta_c: 1.0 }
    }
}

impl LrGroups {
    pub fn rate(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Network => self.eta,
            ParamGroup::ShiftA => self.eta * self.eta_a,
            ParamGroup::ScaleB => self.eta * self.eta_b,
            ParamGroup::GateC => self.eta * self.eta_c,
        }
    }
}

/// RMSProp with per-parameter squared-gradient accumulators.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RmsProp {
    v: Vec<Vec<f64>>,
    pub rho: f64,
    pub eps: f64,
}

impl RmsProp {
    pub fn new(store: &ParamStore) -> Self {
        let v = store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        RmsProp { v, rho: 0.9, eps: 1e-8 }
    }

    /// One update over every parameter in the store from its accumulated
    /// gradient: v <- rho v + (1-rho) g^2; w <- w - lr g/(sqrt(v)+eps).
    pub fn step(&mut self, store: &mut ParamStore, lr: &LrGroups) -> Result<()> {
        if self.v.len() != store.len() {
            return Err(Error::Autodiff(
                "optimizer state does not match parameter store".into(),
            ));
        }
        for (i, (_, p)) in store.iter_mut().enumerate() {
            let rate = lr.rate(p.group);
            let v = &mut self.v[i];
            for (e, g) in p.grad.values().iter().enumerate() {
                v[e] = self.rho * v[e] + (1.0 - self.rho) * g * g;
            }
            if rate == 0.0 {
                continue;
            }
            let grads: Vec<f64> = p.grad.values().to_vec();
            for (e, w) in p.value.values_mut().iter_mut().enumerate() {
                *w -= rate * grads[e] / (v[e].sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Draws training indices with replacement, each sample weighted by the
/// inverse frequency of its class, so expected class representation is
/// uniform over the classes actually present.
#[derive(Clone, Debug)]
pub struct BalancedSampler {
    pub class_counts: Vec<usize>,
    weights: Vec<f64>,
    dist: WeightedIndex<f64>,
}

impl BalancedSampler {
    pub fn new(labels: &[usize], n_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Data("cannot sample from an empty training set".into()));
        }
        let mut class_counts = vec![0usize; n_classes];
        for &l in labels {
            if l >= n_classes {
                return Err(Error::Data(format!(
                    "label {} out of range for {} classes",
                    l, n_classes
                )));
            }
            class_counts[l] += 1;
        }
        let weights: Vec<f64> = labels
            .iter()
            .map(|&l| 1.0 / class_counts[l] as f64)
            .collect();
        let dist = WeightedIndex::new(weights.clone())
            .map_err(|e| Error::Data(format!("sampler weights invalid: {}", e)))?;
        Ok(BalancedSampler { class_counts, weights, dist })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sample(&self, rng: &mut impl Rng, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.dist.sample(rng)).collect()
    }
}

/// Pearson chi-square statistic of `counts` against a uniform expectation.
pub fn chi_square_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expect = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expect;
            d * d / expect
        })
        .sum()
}

/// Negative log softmax probability of `label`, via the log-sum-exp form
/// with the max logit subtracted as a constant, so logits of magnitude up
/// to about 1e4 stay finite.
pub fn cross_entropy(tape: &mut Tape, logits: ValueId, label: usize) -> Result<ValueId> {
    let t = tape.value(logits);
    if t.rank() != 1 {
        return Err(Error::shape("cross_entropy", "logits must be a vector"));
    }
    let n = t.numel();
    if label >= n {
        return Err(Error::Data(format!(
            "label {} out of range for {} logits",
            label, n
        )));
    }
    let m = t.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted = tape.add_scalar(logits, -m)?;
    let exps = tape.exp(shifted)?;
    let total = tape.sum_all(exps)?;
    let ln_total = tape.ln(total)?;
    let lse = tape.add_scalar(ln_total, m)?;
    let picked = tape.pick(logits, label)?;
    tape.sub(lse, picked)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub accuracy: f64,
}

/// One pass of ceil(M / batch_size) balanced batches: normalize, forward,
/// mean cross-entropy, backward, RMSProp step. Numeric blow-ups abort with
/// epoch/batch context rather than being skipped.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    model: &Model,
    normalizer: &mut Normalizer,
    store: &mut ParamStore,
    opt: &mut RmsProp,
    lr: &LrGroups,
    windows: &[Tensor],
    labels: &[usize],
    sampler: &BalancedSampler,
    batch_size: usize,
    epoch: usize,
    rng: &mut impl Rng,
) -> Result<EpochStats> {
    if windows.len() != labels.len() {
        return Err(Error::Data("window/label count mismatch".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let m = windows.len();
    let n_batches = m.div_ceil(batch_size);
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut seen = 0usize;

    for batch in 0..n_batches {
        let mut run = || -> Result<(f64, usize)> {
            let idx = sampler.sample(rng, batch_size);
            let batch_windows: Vec<&Tensor> = idx.iter().map(|&i| &windows[i]).collect();
            let mut tape = Tape::new();
            let normed = normalizer.forward_batch(&mut tape, store, &batch_windows, true)?;
            let mut losses = Vec::with_capacity(idx.len());
            let mut batch_correct = 0usize;
            for (pos, &i) in idx.iter().enumerate() {
                let logits = model.forward_train(&mut tape, store, normed[pos], rng)?;
                if argmax(tape.value(logits).values()) == labels[i] {
                    batch_correct += 1;
                }
                losses.push(cross_entropy(&mut tape, logits, labels[i])?);
            }
            let batch_loss = tape.mean_of(&losses)?;
            tape.backward(batch_loss)?;
            store.zero_grads();
            tape.accumulate_grads(store)?;
            opt.step(store, lr)?;
            Ok((tape.value(batch_loss).values()[0], batch_correct))
        };
        match run() {
            Ok((loss, batch_correct)) => {
                loss_sum += loss;
                correct += batch_correct;
                seen += batch_size;
            }
            Err(e @ (Error::NonFinite { .. } | Error::Math { .. } | Error::Diverged { .. })) => {
                return Err(Error::Diverged {
                    epoch,
                    batch,
                    msg: e.to_string(),
                });
            }
            Err(other) => return Err(other),
        }
    }

    Ok(EpochStats {
        mean_loss: loss_sum / n_batches as f64,
        accuracy: correct as f64 / seen as f64,
    })
}

/// Inference over a set of windows: predicted class per window.
pub fn predict(
    model: &Model,
    normalizer: &mut Normalizer,
    store: &ParamStore,
    windows: &[Tensor],
) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(windows.len());
    // evaluate in modest chunks so tapes stay small
    for chunk in windows.chunks(256) {
        let refs: Vec<&Tensor> = chunk.iter().collect();
        let mut tape = Tape::new();
        let normed = normalizer.forward_batch(&mut tape, store, &refs, false)?;
        for id in normed {
            let logits = model.forward_eval(&mut tape, store, id)?;
            preds.push(argmax(tape.value(logits).values()));
        }
    }
    Ok(preds)
}
