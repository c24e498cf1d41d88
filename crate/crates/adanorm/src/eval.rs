//! Classification metrics (macro precision/recall/F1, Cohen's kappa) and
//! the distribution-shift robustness evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::normalize::Normalizer;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::train::predict;

/// Square count matrix, rows = true class, cols = predicted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("confusion matrix needs at least 1 class".into()));
        }
        Ok(ConfusionMatrix { n, counts: vec![0; n * n] })
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        let mut cm = ConfusionMatrix::new(n)?;
        for (t, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Data("confusion matrix must be square".into()));
            }
            for (p, &c) in row.iter().enumerate() {
                cm.counts[t * n + p] = c;
            }
        }
        Ok(cm)
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.n || pred >= self.n {
            return Err(Error::Data(format!(
                "class out of range: true={} pred={} n={}",
                truth, pred, self.n
            )));
        }
        self.counts[truth * self.n + pred] += 1;
        Ok(())
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|c| self.count(c, c)).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        (0..self.n).map(|p| self.count(c, p)).sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.n).map(|t| self.count(t, c)).sum()
    }
}

pub fn confusion_from_preds(truth: &[usize], pred: &[usize], n: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::Data(format!(
            "length mismatch: {} true vs {} predicted",
            truth.len(),
            pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(n)?;
    for (&t, &p) in truth.iter().zip(pred) {
        cm.add(t, p)?;
    }
    Ok(cm)
}

/// Full metric set for one evaluation. Per-class vectors are indexed by
/// class id; macro values are their unweighted means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_classes: usize,
    pub total: u64,
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub kappa: f64,
    /// Set when expected agreement is 1 and kappa is 0 by convention.
    pub kappa_degenerate: bool,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Cohen's kappa with the chance-agreement correction; `(0, true)` when
/// expected agreement is exactly 1.
pub fn cohen_kappa(cm: &ConfusionMatrix) -> Result<(f64, bool)> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("kappa of an empty confusion matrix".into()));
    }
    let t = total as f64;
    let p_o = cm.trace() as f64 / t;
    let p_e = (0..cm.n_classes())
        .map(|c| cm.row_sum(c) as f64 * cm.col_sum(c) as f64)
        .sum::<f64>()
        / (t * t);
    if p_e == 1.0 {
        return Ok((0.0, true));
    }
    Ok(((p_o - p_e) / (1.0 - p_e), false))
}

/// Per-class precision/recall/F1 (zero-denominator classes contribute 0),
/// macro averages, accuracy, and kappa.
pub fn metrics_report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("metrics of an empty confusion matrix".into()));
    }
    let n = cm.n_classes();
    let mut precision = Vec::with_capacity(n);
    let mut recall = Vec::with_capacity(n);
    let mut f1 = Vec::with_capacity(n);
    for c in 0..n {
        let tp = cm.count(c, c);
        let p = ratio(tp, cm.col_sum(c));
        let r = ratio(tp, cm.row_sum(c));
        precision.push(p);
        recall.push(r);
        f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (kappa, kappa_degenerate) = cohen_kappa(cm)?;
    Ok(MetricsReport {
        n_classes: n,
        total,
        accuracy: cm.trace() as f64 / total as f64,
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        precision,
        recall,
        f1,
        kappa,
        kappa_degenerate,
    })
}

impl MetricsReport {
    /// Single machine-readable line.
    pub fn to_kv(&self) -> String {
        format!(
            "n={} accuracy={:.6} macro_precision={:.6} macro_recall={:.6} macro_f1={:.6} kappa={:.6}",
            self.total,
            self.accuracy,
            self.macro_precision,
            self.macro_recall,
            self.macro_f1,
            self.kappa
        )
    }

    /// Per-class table plus the macro row.
    pub fn table(&self) -> String {
        let mut out = String::from("class precision recall f1\n");
        for c in 0..self.n_classes {
            out.push_str(&format!(
                "{:<5} {:<9.6} {:<6.6} {:.6}\n",
                c, self.precision[c], self.recall[c], self.f1[c]
            ));
        }
        out.push_str(&format!(
            "macro {:<9.6} {:<6.6} {:.6}\n",
            self.macro_precision, self.macro_recall, self.macro_f1
        ));
        out
    }
}

impl std::fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_kv())
    }
}

/// Measurement-level corruption for robustness runs: every non-exempt
/// feature gains `mult` times its training-set mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub mult: f64,
    pub exempt: Vec<usize>,
    /// Per-feature means, normally fitted on the training windows.
    pub means: Vec<f64>,
}

impl ShiftSpec {
    pub fn from_training_windows(windows: &[Tensor], d: usize, mult: f64) -> Result<ShiftSpec> {
        let mut means = vec![0.0; d];
        let mut rows = 0usize;
        for w in windows {
            if w.cols() != d {
                return Err(Error::shape("shift_spec", "window width mismatch"));
            }
            for row in w.values().chunks(d) {
                for (k, v) in row.iter().enumerate() {
                    means[k] += v;
                }
            }
            rows += w.rows();
        }
        if rows == 0 {
            return Err(Error::Data("no rows to fit shift means".into()));
        }
        for m in &mut means {
            *m /= rows as f64;
        }
        Ok(ShiftSpec { mult, exempt: Vec::new(), means })
    }
}

pub fn apply_shift(w: &Tensor, spec: &ShiftSpec) -> Result<Tensor> {
    let d = w.cols();
    if spec.means.len() != d {
        return Err(Error::shape("apply_shift", "shift means do not match feature count"));
    }
    if spec.exempt.len() >= d && (0..d).all(|k| spec.exempt.contains(&k)) {
        return Ok(w.clone());
    }
    let mut values = w.values().to_vec();
    for row in values.chunks_mut(d) {
        for (k, v) in row.iter_mut().enumerate() {
            if !spec.exempt.contains(&k) {
                *v += spec.mult * spec.means[k];
            }
        }
    }
    Tensor::new(w.shape().to_vec(), values)
}

/// Evaluates a frozen model on the clean windows and on shifted copies.
pub fn robustness_shift_eval(
    model: &Model,
    normalizer: &mut Normalizer,
    store: &ParamStore,
    windows: &[Tensor],
    labels: &[usize],
    n_classes: usize,
    shift: &ShiftSpec,
) -> Result<(MetricsReport, MetricsReport)> {
    if windows.len() != labels.len() {
        return Err(Error::Data("window/label count mismatch".into()));
    }
    let clean_preds = predict(model, normalizer, store, windows)?;
    let shifted_windows: Vec<Tensor> = windows
        .iter()
        .map(|w| apply_shift(w, shift))
        .collect::<Result<_>>()?;
    let shifted_preds = predict(model, normalizer, store, &shifted_windows)?;
    let clean = metrics_report(&confusion_from_preds(labels, &clean_preds, n_classes)?)?;
    let shifted = metrics_report(&confusion_from_preds(labels, &shifted_preds, n_classes)?)?;
    Ok((clean, shifted))
}

/// Mean and sample standard deviation (n-1; zero for a single value).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::Data("nothing to aggregate".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(Aggregate { mean, std, n })
}

impl std::fmt::Display for Aggregate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.6} ± {:.6}", self.mean, self.std)
    }
}
