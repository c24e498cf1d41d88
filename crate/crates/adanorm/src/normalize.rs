//! Input normalization: the adaptive (trainable) layer and the static
//! baselines it is compared against.
//!
//! The adaptive layer works per window. It computes summary statistics over
//! the window's time axis and turns them into a learned center `alpha`, a
//! learned divisor `beta`, and a learned multiplicative gate `gamma`:
//!
//!   shift:       a = mean_t(x),            alpha = W_a a,  x' = x - alpha
//!   scale:       b = sqrt(mean_t(x'^2)),   beta  = W_b b,  x'' = x' / guard(beta)
//!   gate:        c = mean_t(x''),          gamma = sigm(W_c c + d),  out = x'' * gamma
//!
//! `Shift` applies the first stage, `ShiftScale` the first two, `Full` all
//! three. At identity initialization (W_a = W_b = I) the first two stages
//! reduce to per-window standardization, which is also available as the
//! static `instance` baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{normal_init, ParamGroup, ParamId, ParamStore};
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

/// Shared divisor floor across every normalization scheme.
pub const EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DainMode {
    Shift,
    ShiftScale,
    Full,
}

impl DainMode {
    pub fn label(self) -> &'static str {
        match self {
            DainMode::Shift => "shift",
            DainMode::ShiftScale => "shift_scale",
            DainMode::Full => "full",
        }
    }

    pub fn from_label(s: &str) -> Result<Self> {
        match s {
            "shift" => Ok(DainMode::Shift),
            "shift_scale" => Ok(DainMode::ShiftScale),
            "full" => Ok(DainMode::Full),
            other => Err(Error::Config(format!(
                "unknown dain mode '{}' (expected shift|shift_scale|full)",
                other
            ))),
        }
    }
}

/// Trainable normalization layer. Holds parameter handles; values live in
/// the `ParamStore` so the optimizer and checkpoints see them like any
/// other parameter.
#[derive(Clone, Debug)]
pub struct DainLayer {
    pub w_a: ParamId,
    pub w_b: ParamId,
    pub w_c: ParamId,
    pub d_bias: ParamId,
    dim: usize,
}

impl DainLayer {
    /// W_a and W_b start at the identity so the layer begins as plain
    /// per-window standardization; the gate starts near-neutral
    /// (gamma ~= 0.5 everywhere).
    pub fn new(store: &mut ParamStore, dim: usize, rng: &mut impl Rng) -> Self {
        let w_a = store.add("dain.w_a", ParamGroup::ShiftA, Tensor::eye(dim));
        let w_b = store.add("dain.w_b", ParamGroup::ScaleB, Tensor::eye(dim));
        let w_c = store.add(
            "dain.w_c",
            ParamGroup::GateC,
            normal_init(vec![dim, dim], 0.0, 0.01, rng),
        );
        let d_bias = store.add("dain.d_bias", ParamGroup::GateC, Tensor::zeros(vec![dim]));
        DainLayer { w_a, w_b, w_c, d_bias, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_input(&self, tape: &Tape, x: ValueId) -> Result<usize> {
        let t = tape.value(x);
        if t.rank() != 2 || t.cols() != self.dim {
            return Err(Error::shape(
                "dain_forward",
                format!("expected [L,{}], got {:?}", self.dim, t.shape()),
            ));
        }
        Ok(t.rows())
    }

    /// Stage 1: learned centering. Returns (alpha, shifted).
    pub fn adaptive_shift(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: ValueId,
    ) -> Result<(ValueId, ValueId)> {
        let rows = self.check_input(tape, x)?;
        let w_a = tape.param(store, self.w_a);
        let a = tape.mean_rows(x)?;
        let alpha = tape.matvec(w_a, a)?;
        let alpha_rows = tape.broadcast_rows(alpha, rows)?;
        let shifted = tape.sub(x, alpha_rows)?;
        Ok((alpha, shifted))
    }

    /// Stage 2: learned scaling of the centered window. Returns
    /// (beta, scaled). The divisor is floored away from zero, so a constant
    /// window scales to zero instead of dividing by zero.
    pub fn adaptive_scale(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        shifted: ValueId,
    ) -> Result<(ValueId, ValueId)> {
        let rows = tape.value(shifted).rows();
        let w_b = tape.param(store, self.w_b);
        let sq = tape.mul(shifted, shifted)?;
        let msq = tape.mean_rows(sq)?;
        let b = tape.sqrt(msq)?;
        let beta = tape.matvec(w_b, b)?;
        let guarded = tape.guard(beta, EPS)?;
        let divisor = tape.broadcast_rows(guarded, rows)?;
        let scaled = tape.div(shifted, divisor)?;
        Ok((beta, scaled))
    }

    /// Stage 3: learned gating. Returns (gamma, gated); every gate entry is
    /// strictly inside (0,1).
    pub fn adaptive_gate(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        scaled: ValueId,
    ) -> Result<(ValueId, ValueId)> {
        let rows = tape.value(scaled).rows();
        let w_c = tape.param(store, self.w_c);
        let d_bias = tape.param(store, self.d_bias);
        let c = tape.mean_rows(scaled)?;
        let wc_c = tape.matvec(w_c, c)?;
        let pre = tape.add(wc_c, d_bias)?;
        let gamma = tape.sigmoid(pre)?;
        let gamma_rows = tape.broadcast_rows(gamma, rows)?;
        let gated = tape.mul(scaled, gamma_rows)?;
        Ok((gamma, gated))
    }

    /// Applies the stages selected by `mode`. Output shape equals input
    /// shape; differentiable w.r.t. the input and all four parameters.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: ValueId,
        mode: DainMode,
    ) -> Result<ValueId> {
        let (_, shifted) = self.adaptive_shift(tape, store, x)?;
        if mode == DainMode::Shift {
            return Ok(shifted);
        }
        let (_, scaled) = self.adaptive_scale(tape, store, shifted)?;
        if mode == DainMode::ShiftScale {
            return Ok(scaled);
        }
        let (_, gated) = self.adaptive_gate(tape, store, scaled)?;
        Ok(gated)
    }
}

fn column_means(x: &Tensor) -> Vec<f64> {
    let (l, d) = (x.rows(), x.cols());
    let mut acc = vec![0.0; d];
    for j in 0..l {
        for k in 0..d {
            acc[k] += x.values()[j * d + k];
        }
    }
    for v in &mut acc {
        *v /= l as f64;
    }
    acc
}

fn require_window(op: &'static str, x: &Tensor) -> Result<()> {
    if x.rank() != 2 || x.rows() == 0 {
        return Err(Error::shape(op, format!("expected non-empty [L,d], got {:?}", x.shape())));
    }
    Ok(())
}

/// Per-window, per-feature standardization using the window's own mean and
/// (population) standard deviation, divisor floored at `EPS`.
///
/// The arithmetic mirrors the adaptive layer's ShiftScale path at identity
/// weights operation for operation, so the two agree to the last bit.
pub fn instance_normalize(x: &Tensor) -> Result<Tensor> {
    require_window("instance_normalize", x)?;
    let (l, d) = (x.rows(), x.cols());
    let mean = column_means(x);
    let mut msq = vec![0.0; d];
    for j in 0..l {
        for k in 0..d {
            let s = x.values()[j * d + k] - mean[k];
            msq[k] += s * s;
        }
    }
    let mut divisor = vec![0.0; d];
    for k in 0..d {
        let b = (msq[k] / l as f64).sqrt();
        divisor[k] = if b.abs() >= EPS { b } else { EPS };
    }
    let mut out = Vec::with_capacity(l * d);
    for j in 0..l {
        for k in 0..d {
            out.push((x.values()[j * d + k] - mean[k]) / divisor[k]);
        }
    }
    Tensor::new(vec![l, d], out)
}

/// Subtracts the window's average measurement vector (centering only).
pub fn sample_avg_normalize(x: &Tensor) -> Result<Tensor> {
    require_window("sample_avg_normalize", x)?;
    let (l, d) = (x.rows(), x.cols());
    let mean = column_means(x);
    let mut out = Vec::with_capacity(l * d);
    for j in 0..l {
        for k in 0..d {
            out.push(x.values()[j * d + k] - mean[k]);
        }
    }
    Tensor::new(vec![l, d], out)
}

/// Per-feature statistics fitted on the training split, fixed thereafter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GlobalStats {
    /// Fits per-feature mean and population standard deviation over rows.
    pub fn fit<'a>(d: usize, rows: impl Iterator<Item = &'a [f64]> + Clone) -> Result<GlobalStats> {
        let mut mu = vec![0.0; d];
        let mut n = 0usize;
        for row in rows.clone() {
            if row.len() != d {
                return Err(Error::shape("global_stats", "row width mismatch"));
            }
            for k in 0..d {
                mu[k] += row[k];
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Data("cannot fit statistics on zero rows".into()));
        }
        for v in &mut mu {
            *v /= n as f64;
        }
        let mut var = vec![0.0; d];
        for row in rows {
            for k in 0..d {
                let s = row[k] - mu[k];
                var[k] += s * s;
            }
        }
        let sigma = var.iter().map(|v| (v / n as f64).sqrt()).collect();
        Ok(GlobalStats { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Standardizes by fixed global statistics: (x - mu) / max(sigma, EPS).
pub fn zscore_normalize(x: &Tensor, stats: &GlobalStats) -> Result<Tensor> {
    require_window("zscore_normalize", x)?;
    let (l, d) = (x.rows(), x.cols());
    if d != stats.dim() {
        return Err(Error::shape(
            "zscore_normalize",
            format!("window has {} features, stats have {}", d, stats.dim()),
        ));
    }
    let mut out = Vec::with_capacity(l * d);
    for j in 0..l {
        for k in 0..d {
            out.push((x.values()[j * d + k] - stats.mu[k]) / stats.sigma[k].max(EPS));
        }
    }
    Tensor::new(vec![l, d], out)
}

/// Running-statistics standardization over whole batches of windows,
/// without the learnable affine. Training batches update the running
/// statistics; inference uses the running statistics only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub updates: u64,
}

impl BatchNormState {
    pub fn new(d: usize) -> Self {
        BatchNormState {
            running_mean: vec![0.0; d],
            running_var: vec![1.0; d],
            momentum: 0.1,
            updates: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.running_mean.len()
    }

    /// Per-feature mean and population variance over every row of every
    /// window in the batch.
    pub fn batch_stats(windows: &[&Tensor]) -> Result<(Vec<f64>, Vec<f64>)> {
        let first = windows
            .first()
            .ok_or_else(|| Error::Data("batch statistics need at least one window".into()))?;
        let d = first.cols();
        let mut mean = vec![0.0; d];
        let mut n = 0usize;
        for w in windows {
            require_window("batch_stats", w)?;
            if w.cols() != d {
                return Err(Error::shape("batch_stats", "feature width varies across batch"));
            }
            for j in 0..w.rows() {
                for k in 0..d {
                    mean[k] += w.values()[j * d + k];
                }
            }
            n += w.rows();
        }
        for v in &mut mean {
            *v /= n as f64;
        }
        let mut var = vec![0.0; d];
        for w in windows {
            for j in 0..w.rows() {
                for k in 0..d {
                    let s = w.values()[j * d + k] - mean[k];
                    var[k] += s * s;
                }
            }
        }
        for v in &mut var {
            *v /= n as f64;
        }
        Ok((mean, var))
    }

    pub fn update(&mut self, batch_mean: &[f64], batch_var: &[f64]) {
        let m = self.momentum;
        for k in 0..self.running_mean.len() {
            self.running_mean[k] = (1.0 - m) * self.running_mean[k] + m * batch_mean[k];
            self.running_var[k] = (1.0 - m) * self.running_var[k] + m * batch_var[k];
        }
        self.updates += 1;
    }

    fn apply(x: &Tensor, mean: &[f64], var: &[f64]) -> Result<Tensor> {
        let (l, d) = (x.rows(), x.cols());
        let mut out = Vec::with_capacity(l * d);
        for j in 0..l {
            for k in 0..d {
                out.push((x.values()[j * d + k] - mean[k]) / var[k].sqrt().max(EPS));
            }
        }
        Tensor::new(vec![l, d], out)
    }
}

/// The normalization scheme placed in front of a classifier. The adaptive
/// variant owns tape-recorded parameters; the baselines are pure input
/// transformations whose state (if any) is fitted once and frozen.
#[derive(Debug)]
pub enum Normalizer {
    None,
    Zscore(GlobalStats),
    SampleAvg,
    Instance,
    BatchNorm(BatchNormState),
    Dain { layer: DainLayer, mode: DainMode },
}

impl Normalizer {
    pub fn kind_label(&self) -> &'static str {
        match self {
            Normalizer::None => "none",
            Normalizer::Zscore(_) => "zscore",
            Normalizer::SampleAvg => "sample_avg",
            Normalizer::Instance => "instance",
            Normalizer::BatchNorm(_) => "batchnorm",
            Normalizer::Dain { .. } => "dain",
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, Normalizer::Dain { .. })
    }

    /// Normalizes a batch of windows onto the tape, returning one tape node
    /// per window. Static schemes enter the tape as transformed leaves; the
    /// adaptive layer records its computation so its parameters receive
    /// gradients. `train` only matters for batch norm, whose running
    /// statistics are updated from training batches and required for
    /// inference.
    pub fn forward_batch(
        &mut self,
        tape: &mut Tape,
        store: &ParamStore,
        windows: &[&Tensor],
        train: bool,
    ) -> Result<Vec<ValueId>> {
        match self {
            Normalizer::None => Ok(windows.iter().map(|w| tape.input((*w).clone())).collect()),
            Normalizer::Zscore(stats) => windows
                .iter()
                .map(|w| Ok(tape.input(zscore_normalize(w, stats)?)))
                .collect(),
            Normalizer::SampleAvg => windows
                .iter()
                .map(|w| Ok(tape.input(sample_avg_normalize(w)?)))
                .collect(),
            Normalizer::Instance => windows
                .iter()
                .map(|w| Ok(tape.input(instance_normalize(w)?)))
                .collect(),
            Normalizer::BatchNorm(state) => {
                let (mean, var) = if train {
                    let (m, v) = BatchNormState::batch_stats(windows)?;
                    state.update(&m, &v);
                    (m, v)
                } else {
                    if state.updates == 0 {
                        return Err(Error::Data(
                            "batch norm inference requested before any training update".into(),
                        ));
                    }
                    (state.running_mean.clone(), state.running_var.clone())
                };
                windows
                    .iter()
                    .map(|w| Ok(tape.input(BatchNormState::apply(w, &mean, &var)?)))
                    .collect()
            }
            Normalizer::Dain { layer, mode } => windows
                .iter()
                .map(|w| {
                    let x = tape.input((*w).clone());
                    layer.forward(tape, store, x, *mode)
                })
                .collect(),
        }
    }
}
