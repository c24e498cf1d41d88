//! End-to-end gradient verification: analytic gradients of the full
//! pipeline (adaptive normalization -> classifier -> cross-entropy) against
//! central finite differences, at dimensions small enough to difference
//! every single parameter element.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::models::{Model, ModelConfig, ModelKind};
use crate::normalize::{DainLayer, DainMode};
use crate::params::{ParamId, ParamStore};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::train::cross_entropy;

pub const DEFAULT_TOL: f64 = 1e-6;
const FD_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GradcheckSpec {
    pub model: ModelKind,
    pub mode: DainMode,
    pub d: usize,
    pub l: usize,
    pub hidden: usize,
    pub n_classes: usize,
    pub seed: u64,
    /// Test fixture: corrupt one analytic gradient entry so the harness
    /// must report a failure. Verifies the check can actually fail.
    pub corrupt: bool,
}

impl GradcheckSpec {
    pub fn new(model: ModelKind, mode: DainMode, seed: u64) -> Self {
        GradcheckSpec {
            model,
            mode,
            d: 4,
            l: 5,
            hidden: 8,
            n_classes: 3,
            seed,
            corrupt: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub model: ModelKind,
    pub mode: DainMode,
    pub seed: u64,
    /// Worst relative error per parameter, by name.
    pub param_errs: Vec<(String, f64)>,
    pub input_err: f64,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "model={} mode={} seed={} max_rel_err={:.3e} input_err={:.3e} tol={:.0e} status={}",
            self.model.label(),
            self.mode.label(),
            self.seed,
            self.max_rel_err,
            self.input_err,
            self.tol,
            if self.passed() { "pass" } else { "FAIL" }
        )
    }
}

/// Differences every parameter element and every input element of the full
/// normalize-classify-loss pipeline against the tape's gradients.
pub fn run_gradcheck(spec: &GradcheckSpec) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut store = ParamStore::new();
    let dain = DainLayer::new(&mut store, spec.d, &mut rng);
    // nudge the adaptive weights off their identity/zero init so every
    // gradient path carries signal
    for pid in [dain.w_a, dain.w_b, dain.w_c] {
        let mut t = store.value(pid).clone();
        for v in t.values_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
        store.set_value(pid, t)?;
    }

    let mut cfg = ModelConfig::new(spec.model);
    cfg.hidden = spec.hidden;
    cfg.filters = spec.hidden;
    cfg.gru_hidden = spec.hidden;
    cfg.dropout = 0.0;
    let model = cfg.build(&mut store, spec.l, spec.d, spec.n_classes, &mut rng)?;

    let x = Tensor::new(
        vec![spec.l, spec.d],
        (0..spec.l * spec.d)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect(),
    )?;
    let label = (spec.seed as usize) % spec.n_classes;

    let loss_of = |store: &ParamStore, x: &Tensor, model: &Model| -> Result<f64> {
        let mut tape = Tape::new();
        let xid = tape.input(x.clone());
        let normed = dain.forward(&mut tape, store, xid, spec.mode)?;
        let logits = model.forward_eval(&mut tape, store, normed)?;
        let loss = cross_entropy(&mut tape, logits, label)?;
        Ok(tape.value(loss).values()[0])
    };

    // analytic pass
    let mut tape = Tape::new();
    let xid = tape.input(x.clone());
    let normed = dain.forward(&mut tape, &store, xid, spec.mode)?;
    let logits = model.forward_eval(&mut tape, &store, normed)?;
    let loss = cross_entropy(&mut tape, logits, label)?;
    tape.backward(loss)?;
    store.zero_grads();
    tape.accumulate_grads(&mut store)?;
    let mut input_grad = tape.grad(xid)?.to_vec();
    if spec.corrupt {
        input_grad[0] += 1e-3;
    }

    let rel = |analytic: f64, fd: f64| (analytic - fd).abs() / fd.abs().max(1.0);

    let mut param_errs = Vec::new();
    let mut max_err = 0.0f64;
    for i in 0..store.len() {
        let pid = ParamId(i);
        let name = store.get(pid).name.clone();
        let analytic = store.grad(pid).values().to_vec();
        let mut worst = 0.0f64;
        for e in 0..analytic.len() {
            let orig = store.value(pid).clone();
            let mut plus = orig.clone();
            plus.values_mut()[e] += FD_STEP;
            let mut minus = orig.clone();
            minus.values_mut()[e] -= FD_STEP;
            store.set_value(pid, plus)?;
            let fp = loss_of(&store, &x, &model)?;
            store.set_value(pid, minus)?;
            let fm = loss_of(&store, &x, &model)?;
            store.set_value(pid, orig)?;
            let fd = (fp - fm) / (2.0 * FD_STEP);
            worst = worst.max(rel(analytic[e], fd));
        }
        max_err = max_err.max(worst);
        param_errs.push((name, worst));
    }

    let mut input_err = 0.0f64;
    for e in 0..x.numel() {
        let mut plus = x.clone();
        plus.values_mut()[e] += FD_STEP;
        let mut minus = x.clone();
        minus.values_mut()[e] -= FD_STEP;
        let fd = (loss_of(&store, &plus, &model)? - loss_of(&store, &minus, &model)?)
            / (2.0 * FD_STEP);
        input_err = input_err.max(rel(input_grad[e], fd));
    }
    max_err = max_err.max(input_err);

    Ok(GradcheckReport {
        model: spec.model,
        mode: spec.mode,
        seed: spec.seed,
        param_errs,
        input_err,
        max_rel_err: max_err,
        tol: DEFAULT_TOL,
    })
}

/// All model x mode combinations at one seed.
pub fn gradcheck_sweep(seed: u64, corrupt: bool) -> Result<Vec<GradcheckReport>> {
    let mut reports = Vec::new();
    for model in [ModelKind::Mlp, ModelKind::Cnn, ModelKind::Gru] {
        for mode in [DainMode::Shift, DainMode::ShiftScale, DainMode::Full] {
            let mut spec = GradcheckSpec::new(model, mode, seed);
            spec.corrupt = corrupt;
            reports.push(run_gradcheck(&spec)?);
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_shift_scale_passes() {
        let report = run_gradcheck(&GradcheckSpec::new(ModelKind::Mlp, DainMode::ShiftScale, 0)).unwrap();
        assert!(report.passed(), "{}", report);
    }

    #[test]
    fn gru_full_passes() {
        let report = run_gradcheck(&GradcheckSpec::new(ModelKind::Gru, DainMode::Full, 0)).unwrap();
        assert!(report.passed(), "{}", report);
        assert!(report.input_err < DEFAULT_TOL);
    }

    #[test]
    fn cnn_shift_passes() {
        let report = run_gradcheck(&GradcheckSpec::new(ModelKind::Cnn, DainMode::Shift, 1)).unwrap();
        assert!(report.passed(), "{}", report);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut spec = GradcheckSpec::new(ModelKind::Mlp, DainMode::ShiftScale, 0);
        spec.corrupt = true;
        let report = run_gradcheck(&spec).unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn reports_are_reproducible() {
        let spec = GradcheckSpec::new(ModelKind::Mlp, DainMode::Full, 42);
        let a = run_gradcheck(&spec).unwrap();
        let b = run_gradcheck(&spec).unwrap();
        assert_eq!(a.max_rel_err, b.max_rel_err);
        assert_eq!(a.param_errs, b.param_errs);
    }
}
