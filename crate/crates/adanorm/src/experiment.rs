//! End-to-end experiment drivers: dataset assembly from config, per-fold
//! training with logs and checkpoints, evaluation (clean and shifted), and
//! synthetic dataset emission.

use std::borrow::Cow;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{capture_with_dim, Checkpoint};
use crate::config::{DataSource, ExperimentConfig, NormKind, Prescale, Task};
use crate::data::{
    anchored_folds, chrono_split, emitted_schema, label_windows_midprice,
    label_windows_power, label_windows_precomputed, load_feature_csv, make_windows,
    write_series_csv, CsvSchema, WindowedDataset,
};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate, confusion_from_preds, metrics_report, robustness_shift_eval, Aggregate,
    MetricsReport, ShiftSpec,
};
use crate::models::Model;
use crate::normalize::{
    zscore_normalize, BatchNormState, DainLayer, GlobalStats, Normalizer,
};
use crate::params::ParamStore;
use crate::synth::{synth_bimodal, shift_features, SyntheticSpec};
use crate::tensor::Tensor;
use crate::train::{predict, train_epoch, BalancedSampler, EpochStats, RmsProp};

/// All windows of a run plus the (train, test) index ranges per fold.
#[derive(Debug)]
pub struct PreparedData {
    pub data: WindowedDataset,
    pub folds: Vec<(Range<usize>, Range<usize>)>,
    /// Human-readable ingestion notes (fills, drops, skipped days).
    pub notes: Vec<String>,
}

fn csv_schema(cfg: &ExperimentConfig) -> Result<CsvSchema> {
    let d = &cfg.dataset;
    let target = d
        .target
        .ok_or_else(|| Error::Config("dataset.target: required".into()))?;
    let mut schema = CsvSchema::new(d.features.clone(), target);
    schema.day_col = d.day;
    schema.label_col = d.label;
    Ok(schema)
}

fn load_labeled(
    cfg: &ExperimentConfig,
    path: &Path,
    notes: &mut Vec<String>,
    tag: &str,
) -> Result<WindowedDataset> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "dataset.path: no such file '{}'",
            path.display()
        )));
    }
    let schema = csv_schema(cfg)?;
    let (series, report) = load_feature_csv(path, &schema)?;
    notes.push(format!(
        "{}: read {} rows, dropped {}, filled {} cells",
        tag, report.rows_read, report.rows_dropped, report.cells_filled
    ));
    let (windows, skipped) = make_windows(&series, cfg.dataset.window)?;
    if skipped > 0 {
        notes.push(format!("{}: skipped {} days shorter than the window", tag, skipped));
    }
    let n_classes = match cfg.dataset.task {
        Task::Midprice => 3,
        Task::Power => 2,
    };
    let (labeled, dropped) = if cfg.dataset.label.is_some() {
        (
            label_windows_precomputed(windows, &series, cfg.dataset.label_offset, n_classes)?,
            0,
        )
    } else {
        match cfg.dataset.task {
            Task::Midprice => label_windows_midprice(
                windows,
                &series,
                cfg.dataset.horizon,
                cfg.dataset.theta,
            )?,
            Task::Power => label_windows_power(windows, &series)?,
        }
    };
    if dropped > 0 {
        notes.push(format!("{}: dropped {} windows without a label horizon", tag, dropped));
    }
    if labeled.is_empty() {
        return Err(Error::Data(format!("{}: no labeled windows", tag)));
    }
    Ok(labeled)
}

fn synthetic_spec(cfg: &ExperimentConfig) -> SyntheticSpec {
    let mut spec = SyntheticSpec::new(cfg.training.seed);
    if let Some(rows) = cfg.dataset.rows_per_day {
        spec.rows_per_day = rows;
    }
    spec
}

/// Builds the windowed dataset and fold plan a config describes.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let mut notes = Vec::new();
    match cfg.dataset.source {
        DataSource::Synthetic => {
            let spec = synthetic_spec(cfg);
            let (train_series, test_series) = synth_bimodal(&spec)?;
            let label = |series| -> Result<WindowedDataset> {
                let (w, _) = make_windows(series, cfg.dataset.window)?;
                let (labeled, _) = label_windows_midprice(
                    w,
                    series,
                    cfg.dataset.horizon,
                    cfg.dataset.theta,
                )?;
                Ok(labeled)
            };
            let train = label(&train_series)?;
            let test = label(&test_series)?;
            let n_train = train.len();
            let data = train.concat(test)?;
            let n_total = data.len();
            notes.push(format!(
                "synthetic: {} train windows, {} test windows",
                n_train,
                n_total - n_train
            ));
            Ok(PreparedData {
                data,
                folds: vec![(0..n_train, n_train..n_total)],
                notes,
            })
        }
        DataSource::Csv => {
            let path = cfg
                .dataset
                .path
                .as_ref()
                .ok_or_else(|| Error::Config("dataset.path: required".into()))?;
            let train = load_labeled(cfg, path, &mut notes, "train")?;
            if let Some(test_path) = &cfg.dataset.test_path {
                let test = load_labeled(cfg, test_path, &mut notes, "test")?;
                let n_train = train.len();
                let data = train.concat(test)?;
                let n_total = data.len();
                return Ok(PreparedData {
                    data,
                    folds: vec![(0..n_train, n_train..n_total)],
                    notes,
                });
            }
            match cfg.dataset.task {
                Task::Midprice => {
                    let plan = anchored_folds(&train.day_ids)?;
                    let folds = plan.fold_ranges(&train)?;
                    Ok(PreparedData { data: train, folds, notes })
                }
                Task::Power => {
                    let (tr, te) = chrono_split(train.len(), 0.9)?;
                    Ok(PreparedData { data: train, folds: vec![(tr, te)], notes })
                }
            }
        }
    }
}

fn fold_seed(base: u64, fold: usize) -> u64 {
    base.wrapping_add(fold as u64)
}

fn build_normalizer(
    cfg: &ExperimentConfig,
    d: usize,
    train_windows: &[Tensor],
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
) -> Result<Normalizer> {
    Ok(match cfg.normalizer {
        NormKind::None => Normalizer::None,
        NormKind::Zscore => Normalizer::Zscore(GlobalStats::fit(
            d,
            train_windows.iter().flat_map(|w| w.values().chunks(d)),
        )?),
        NormKind::SampleAvg => Normalizer::SampleAvg,
        NormKind::Instance => Normalizer::Instance,
        NormKind::BatchNorm => Normalizer::BatchNorm(BatchNormState::new(d)),
        NormKind::Dain => Normalizer::Dain {
            layer: DainLayer::new(store, d, rng),
            mode: cfg.dain_mode,
        },
    })
}

fn prescale_windows<'a>(
    cfg: &ExperimentConfig,
    d: usize,
    fit_on: &[Tensor],
    apply_to: &'a [Tensor],
) -> Result<(Option<GlobalStats>, Cow<'a, [Tensor]>)> {
    match cfg.dataset.prescale {
        Prescale::None => Ok((None, Cow::Borrowed(apply_to))),
        Prescale::Zscore => {
            let stats = GlobalStats::fit(d, fit_on.iter().flat_map(|w| w.values().chunks(d)))?;
            let mapped = apply_to
                .iter()
                .map(|w| zscore_normalize(w, &stats))
                .collect::<Result<Vec<_>>>()?;
            Ok((Some(stats), Cow::Owned(mapped)))
        }
    }
}

/// Everything a finished fold leaves behind.
pub struct TrainedFold {
    pub fold: usize,
    pub seed: u64,
    pub store: ParamStore,
    pub model: Model,
    pub normalizer: Normalizer,
    pub epochs: Vec<EpochStats>,
    pub test: MetricsReport,
    pub log: String,
}

/// Trains and evaluates one fold: seeded build, balanced-sampled epochs,
/// then metrics on the test range.
pub fn train_fold(
    cfg: &ExperimentConfig,
    data: &WindowedDataset,
    train: Range<usize>,
    test: Range<usize>,
    fold: usize,
) -> Result<TrainedFold> {
    let seed = fold_seed(cfg.training.seed, fold);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (l, d, n_classes) = (data.l, data.d, data.n_classes);

    let raw_train = &data.windows[train.clone()];
    let train_labels = &data.labels[train.clone()];
    let raw_test = &data.windows[test.clone()];
    let test_labels = &data.labels[test.clone()];

    let (stats, train_w) = prescale_windows(cfg, d, raw_train, raw_train)?;
    let test_w: Cow<[Tensor]> = match &stats {
        None => Cow::Borrowed(raw_test),
        Some(st) => Cow::Owned(
            raw_test
                .iter()
                .map(|w| zscore_normalize(w, st))
                .collect::<Result<Vec<_>>>()?,
        ),
    };

    let mut store = ParamStore::new();
    let mut normalizer = build_normalizer(cfg, d, &train_w, &mut store, &mut rng)?;
    let model = cfg.model.build(&mut store, l, d, n_classes, &mut rng)?;
    let sampler = BalancedSampler::new(train_labels, n_classes)?;
    let mut opt = RmsProp::new(&store);

    let mut log = String::new();
    let mut epochs = Vec::with_capacity(cfg.training.epochs);
    for epoch in 1..=cfg.training.epochs {
        let t0 = Instant::now();
        let stats = train_epoch(
            &model,
            &mut normalizer,
            &mut store,
            &mut opt,
            &cfg.training.lr,
            &train_w,
            train_labels,
            &sampler,
            cfg.training.batch,
            epoch,
            &mut rng,
        )?;
        log.push_str(&format!(
            "fold={} epoch={} loss={:.6} acc={:.4} wall_ms={}\n",
            fold,
            epoch,
            stats.mean_loss,
            stats.accuracy,
            t0.elapsed().as_millis()
        ));
        epochs.push(stats);
    }

    let preds = predict(&model, &mut normalizer, &store, &test_w)?;
    let test_report = metrics_report(&confusion_from_preds(test_labels, &preds, n_classes)?)?;
    Ok(TrainedFold {
        fold,
        seed,
        store,
        model,
        normalizer,
        epochs,
        test: test_report,
        log,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldSummary {
    pub fold: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub test: MetricsReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub folds: Vec<FoldSummary>,
    pub accuracy: Aggregate,
    pub macro_f1: Aggregate,
    pub kappa: Aggregate,
}

impl RunSummary {
    fn from_folds(folds: Vec<FoldSummary>) -> Result<RunSummary> {
        let acc: Vec<f64> = folds.iter().map(|f| f.test.accuracy).collect();
        let f1: Vec<f64> = folds.iter().map(|f| f.test.macro_f1).collect();
        let kap: Vec<f64> = folds.iter().map(|f| f.test.kappa).collect();
        Ok(RunSummary {
            accuracy: aggregate(&acc)?,
            macro_f1: aggregate(&f1)?,
            kappa: aggregate(&kap)?,
            folds,
        })
    }

    /// Machine-readable summary; contains no timestamps so repeated runs
    /// produce identical bytes.
    pub fn kv(&self) -> String {
        let mut s = String::new();
        for f in &self.folds {
            s.push_str(&format!(
                "fold={} seed={} n_train={} n_test={} {}\n",
                f.fold,
                f.seed,
                f.n_train,
                f.n_test,
                f.test.to_kv()
            ));
        }
        s.push_str(&format!(
            "aggregate folds={} accuracy_mean={:.6} accuracy_std={:.6} macro_f1_mean={:.6} macro_f1_std={:.6} kappa_mean={:.6} kappa_std={:.6}\n",
            self.folds.len(),
            self.accuracy.mean,
            self.accuracy.std,
            self.macro_f1.mean,
            self.macro_f1.std,
            self.kappa.mean,
            self.kappa.std
        ));
        s
    }

    pub fn table(&self) -> String {
        let mut s = String::from("fold  accuracy  macro_p   macro_r   macro_f1  kappa\n");
        for f in &self.folds {
            s.push_str(&format!(
                "{:<5} {:<9.4} {:<9.4} {:<9.4} {:<9.4} {:.4}\n",
                f.fold,
                f.test.accuracy,
                f.test.macro_precision,
                f.test.macro_recall,
                f.test.macro_f1,
                f.test.kappa
            ));
        }
        s.push_str(&format!(
            "mean  {:<9.4} {:<9} {:<9} {:<9.4} {:.4}\n",
            self.accuracy.mean, "", "", self.macro_f1.mean, self.kappa.mean
        ));
        s.push_str(&format!(
            "std   {:<9.4} {:<9} {:<9} {:<9.4} {:.4}\n",
            self.accuracy.std, "", "", self.macro_f1.std, self.kappa.std
        ));
        s
    }
}

/// Trains every fold (optionally in parallel), writing the config echo,
/// per-fold logs and checkpoints, and the metrics summary under the output
/// dir. Returns the summary.
pub fn run_train(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let prepared = prepare_data(cfg)?;
    let outdir = &cfg.output_dir;
    fs::create_dir_all(outdir)?;
    let echo = cfg.to_ini();
    fs::write(outdir.join("config.ini"), &echo)?;

    let n = prepared.folds.len();
    let jobs = cfg.training.jobs.min(n).max(1);
    let mut slots: Vec<Option<Result<TrainedFold>>> = Vec::with_capacity(n);
    slots.resize_with(n, || None);

    if jobs == 1 {
        for (i, slot) in slots.iter_mut().enumerate() {
            let (tr, te) = prepared.folds[i].clone();
            *slot = Some(train_fold(cfg, &prepared.data, tr, te, i));
        }
    } else {
        let next = AtomicUsize::new(0);
        let shared = Mutex::new(&mut slots);
        std::thread::scope(|scope| {
            for _ in 0..jobs {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let (tr, te) = prepared.folds[i].clone();
                    let out = train_fold(cfg, &prepared.data, tr, te, i);
                    shared.lock().expect("fold slot lock")[i] = Some(out);
                });
            }
        });
    }

    let mut fold_summaries = Vec::with_capacity(n);
    for (i, slot) in slots.into_iter().enumerate() {
        let trained = slot.expect("every fold ran")?;
        let fold_dir = outdir.join(format!("fold_{}", i));
        fs::create_dir_all(&fold_dir)?;
        fs::write(fold_dir.join("train.log"), &trained.log)?;
        let ckpt = capture_with_dim(
            &trained.store,
            &trained.normalizer,
            &cfg.model,
            prepared.data.l,
            prepared.data.d,
            prepared.data.n_classes,
            i,
            trained.seed,
            &echo,
        )?;
        ckpt.save(&fold_dir.join("checkpoint.json"))?;
        let (tr, te) = &prepared.folds[i];
        fold_summaries.push(FoldSummary {
            fold: i,
            seed: trained.seed,
            n_train: tr.len(),
            n_test: te.len(),
            test: trained.test,
        });
    }

    let summary = RunSummary::from_folds(fold_summaries)?;
    fs::write(outdir.join("summary.kv"), summary.kv())?;
    fs::write(outdir.join("summary.txt"), summary.table())?;
    if !prepared.notes.is_empty() {
        fs::write(outdir.join("data_notes.txt"), prepared.notes.join("\n") + "\n")?;
    }
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutcome {
    pub fold: usize,
    pub clean: MetricsReport,
    pub shifted: Option<MetricsReport>,
}

/// Evaluates a checkpoint on its fold's test split; with a shift spec it
/// also reports metrics under the 3x-mean style corruption.
pub fn run_evaluate(
    cfg: &ExperimentConfig,
    ckpt_path: &Path,
    shift: Option<(f64, Vec<usize>)>,
) -> Result<EvalOutcome> {
    if shift.is_some() && cfg.dataset.prescale != Prescale::None {
        return Err(Error::Config(
            "dataset.prescale: shift evaluation over a prescaled dataset is unsupported".into(),
        ));
    }
    let ckpt = Checkpoint::load(ckpt_path)?;
    let prepared = prepare_data(cfg)?;
    if ckpt.l != prepared.data.l
        || ckpt.d != prepared.data.d
        || ckpt.n_classes != prepared.data.n_classes
    {
        return Err(Error::shape(
            "evaluate",
            format!(
                "checkpoint is {}x{} with {} classes, dataset is {}x{} with {}",
                ckpt.l, ckpt.d, ckpt.n_classes, prepared.data.l, prepared.data.d,
                prepared.data.n_classes
            ),
        ));
    }
    if ckpt.fold >= prepared.folds.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint fold {} out of range ({} folds)",
            ckpt.fold,
            prepared.folds.len()
        )));
    }
    let (store, model, mut normalizer) = ckpt.restore()?;
    let (train_r, test_r) = prepared.folds[ckpt.fold].clone();
    let test_w = &prepared.data.windows[test_r.clone()];
    let test_labels = &prepared.data.labels[test_r];
    let n_classes = prepared.data.n_classes;

    match shift {
        None => {
            let (_, test_mapped) = prescale_windows(
                cfg,
                prepared.data.d,
                &prepared.data.windows[train_r],
                test_w,
            )?;
            let preds = predict(&model, &mut normalizer, &store, &test_mapped)?;
            let clean = metrics_report(&confusion_from_preds(test_labels, &preds, n_classes)?)?;
            Ok(EvalOutcome { fold: ckpt.fold, clean, shifted: None })
        }
        Some((mult, exempt)) => {
            let mut spec = ShiftSpec::from_training_windows(
                &prepared.data.windows[train_r],
                prepared.data.d,
                mult,
            )?;
            spec.exempt = exempt;
            let (clean, shifted) = robustness_shift_eval(
                &model,
                &mut normalizer,
                &store,
                test_w,
                test_labels,
                n_classes,
                &spec,
            )?;
            Ok(EvalOutcome { fold: ckpt.fold, clean, shifted: Some(shifted) })
        }
    }
}

/// Emits the synthetic dataset (train/test CSVs, an optional shifted test
/// copy, and a ready-to-use dataset config) into the output dir.
pub fn run_synth(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let spec = synthetic_spec(cfg);
    let (train, test) = synth_bimodal(&spec)?;
    let outdir = &cfg.output_dir;
    fs::create_dir_all(outdir)?;
    let mut written = Vec::new();

    let train_path = outdir.join("train.csv");
    write_series_csv(&train_path, &train)?;
    written.push(train_path);
    let test_path = outdir.join("test.csv");
    write_series_csv(&test_path, &test)?;
    written.push(test_path);

    if let Some(mult) = cfg.dataset.shift_mult {
        let mut shifted = test.clone();
        shift_features(&mut shifted, mult);
        let path = outdir.join("test_shifted.csv");
        write_series_csv(&path, &shifted)?;
        written.push(path);
    }

    let schema = emitted_schema(train.d, false);
    let ini = format!(
        "[dataset]\nsource = csv\npath = {}\ntest_path = {}\nfeatures = 0-{}\ntarget = {}\nday = {}\nwindow = {}\nhorizon = {}\ntheta = {}\n",
        outdir.join("train.csv").display(),
        outdir.join("test.csv").display(),
        train.d - 1,
        schema.target_col,
        schema.day_col.expect("emitted schema has a day column"),
        cfg.dataset.window,
        cfg.dataset.horizon,
        cfg.dataset.theta,
    );
    let ini_path = outdir.join("dataset.ini");
    fs::write(&ini_path, ini)?;
    written.push(ini_path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigBuilder;
    use crate::synth::{SYNTH_HORIZON, SYNTH_THETA};

    fn synth_cfg(outdir: &Path, extra: &str) -> ExperimentConfig {
        let text = format!(
            "[dataset]\nsource = synthetic\nrows_per_day = 120\nhorizon = {}\ntheta = {}\n\
             [model]\nhidden = 16\ndropout = 0\n\
             [training]\nepochs = 1\nbatch = 32\nseed = 3\n\
             [output]\ndir = {}\n{}",
            SYNTH_HORIZON,
            SYNTH_THETA,
            outdir.display(),
            extra
        );
        let mut b = ConfigBuilder::new();
        b.apply_ini_text(&text).unwrap();
        b.resolve().unwrap()
    }

    #[test]
    fn prepare_synthetic_single_fold() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synth_cfg(dir.path(), "");
        let prepared = prepare_data(&cfg).unwrap();
        assert_eq!(prepared.folds.len(), 1);
        let (tr, te) = &prepared.folds[0];
        assert!(!tr.is_empty() && !te.is_empty());
        assert_eq!(te.end, prepared.data.len());
        assert_eq!(prepared.data.n_classes, 3);
        // windows per block: rows - (L-1) - horizon
        let per_block = 120 - 14 - SYNTH_HORIZON;
        assert_eq!(tr.len(), 4 * per_block);
    }

    #[test]
    fn train_writes_complete_output_tree() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = synth_cfg(&out, "");
        let summary = run_train(&cfg).unwrap();
        assert_eq!(summary.folds.len(), 1);
        assert!(out.join("config.ini").exists());
        assert!(out.join("summary.kv").exists());
        assert!(out.join("summary.txt").exists());
        assert!(out.join("fold_0/checkpoint.json").exists());
        assert!(out.join("fold_0/train.log").exists());

        let log = fs::read_to_string(out.join("fold_0/train.log")).unwrap();
        assert!(log.contains("epoch=1"));
        assert!(log.contains("loss="));
        assert!(log.contains("acc="));
        assert!(log.contains("wall_ms="));

        let kv = fs::read_to_string(out.join("summary.kv")).unwrap();
        assert!(kv.contains("fold=0"));
        assert!(kv.contains("macro_f1="));
        assert!(kv.contains("kappa="));
        assert!(kv.contains("aggregate"));

        // the echoed config resolves to the same experiment
        let mut b = ConfigBuilder::new();
        b.apply_file(&out.join("config.ini")).unwrap();
        assert_eq!(b.resolve().unwrap(), cfg);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        let cfg_a = synth_cfg(&out_a, "");
        let cfg_b = synth_cfg(&out_b, "");
        run_train(&cfg_a).unwrap();
        run_train(&cfg_b).unwrap();
        let kv_a = fs::read(out_a.join("summary.kv")).unwrap();
        let kv_b = fs::read(out_b.join("summary.kv")).unwrap();
        assert_eq!(kv_a, kv_b);
        let tb_a = fs::read(out_a.join("summary.txt")).unwrap();
        let tb_b = fs::read(out_b.join("summary.txt")).unwrap();
        assert_eq!(tb_a, tb_b);
    }

    #[test]
    fn epochs_zero_still_evaluates() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = {
            let mut c = synth_cfg(&out, "");
            c.training.epochs = 0;
            c
        };
        let summary = run_train(&cfg).unwrap();
        assert_eq!(summary.folds.len(), 1);
        assert!(summary.folds[0].test.total > 0);
        // checkpoint equals a freshly built pipeline at the same seed
        let ckpt = Checkpoint::load(&out.join("fold_0/checkpoint.json")).unwrap();
        let prepared = prepare_data(&cfg).unwrap();
        let (tr, te) = prepared.folds[0].clone();
        let fresh = train_fold(&cfg, &prepared.data, tr, te, 0).unwrap();
        for (saved, (_, built)) in ckpt.params.iter().zip(fresh.store.iter()) {
            assert_eq!(saved.name, built.name);
            for (a, b) in saved.value.values().iter().zip(built.value.values()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn evaluate_reproduces_training_metrics_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = synth_cfg(&out, "");
        let summary = run_train(&cfg).unwrap();
        let outcome =
            run_evaluate(&cfg, &out.join("fold_0/checkpoint.json"), None).unwrap();
        assert_eq!(outcome.fold, 0);
        assert_eq!(outcome.clean, summary.folds[0].test);
        assert_eq!(
            outcome.clean.accuracy.to_bits(),
            summary.folds[0].test.accuracy.to_bits()
        );
    }

    #[test]
    fn evaluate_with_zero_shift_matches_clean() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = synth_cfg(&out, "");
        run_train(&cfg).unwrap();
        let outcome =
            run_evaluate(&cfg, &out.join("fold_0/checkpoint.json"), Some((0.0, vec![])))
                .unwrap();
        let shifted = outcome.shifted.unwrap();
        assert_eq!(outcome.clean, shifted);
    }

    #[test]
    fn evaluate_rejects_dim_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = synth_cfg(&out, "");
        run_train(&cfg).unwrap();
        let mut other = synth_cfg(&out.join("other"), "");
        other.dataset.window = 10;
        let err = run_evaluate(&other, &out.join("fold_0/checkpoint.json"), None).unwrap_err();
        assert!(err.to_string().contains("checkpoint"), "{}", err);
    }

    #[test]
    fn missing_csv_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "[dataset]\nsource = csv\npath = {}/absent.csv\nfeatures = 0-1\ntarget = 0\n\
             [output]\ndir = {}\n",
            dir.path().display(),
            dir.path().display()
        );
        let mut b = ConfigBuilder::new();
        b.apply_ini_text(&text).unwrap();
        let cfg = b.resolve().unwrap();
        let err = run_train(&cfg).unwrap_err();
        assert!(err.to_string().contains("dataset.path"), "{}", err);
    }

    #[test]
    fn synth_emission_round_trips_through_training() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("data");
        let mut cfg = synth_cfg(&out, "");
        cfg.dataset.shift_mult = Some(3.0);
        let files = run_synth(&cfg).unwrap();
        assert_eq!(files.len(), 4);
        assert!(out.join("train.csv").exists());
        assert!(out.join("test.csv").exists());
        assert!(out.join("test_shifted.csv").exists());

        // the emitted dataset.ini plus a couple of keys trains end to end
        let text = format!(
            "{}\n[model]\nhidden = 8\ndropout = 0\n[training]\nepochs = 0\nseed = 1\n\
             [output]\ndir = {}\n",
            fs::read_to_string(out.join("dataset.ini")).unwrap(),
            dir.path().join("run2").display()
        );
        let mut b = ConfigBuilder::new();
        b.apply_ini_text(&text).unwrap();
        let cfg2 = b.resolve().unwrap();
        let summary = run_train(&cfg2).unwrap();
        assert_eq!(summary.folds.len(), 1);

        // labels derived from the emitted files match the in-memory path
        let prepared_mem = prepare_data(&cfg).unwrap();
        let prepared_csv = prepare_data(&cfg2).unwrap();
        assert_eq!(prepared_mem.data.labels, prepared_csv.data.labels);
    }

    #[test]
    fn parallel_folds_match_sequential() {
        let dir = tempfile::tempdir().unwrap();
        // csv midprice source with 4 days -> 3 anchored folds
        let data_dir = dir.path().join("data");
        let cfg_emit = synth_cfg(&data_dir, "");
        run_synth(&cfg_emit).unwrap();
        let base = format!(
            "[dataset]\nsource = csv\npath = {}\nfeatures = 0-5\ntarget = 6\nday = 7\n\
             theta = {}\n[model]\nhidden = 8\ndropout = 0\n\
             [training]\nepochs = 1\nbatch = 32\nseed = 5\n",
            data_dir.join("train.csv").display(),
            SYNTH_THETA
        );
        let resolve = |jobs: usize, out: &Path| {
            let mut b = ConfigBuilder::new();
            b.apply_ini_text(&base).unwrap();
            b.set("training.jobs", jobs.to_string()).unwrap();
            b.set("output.dir", out.display().to_string()).unwrap();
            b.resolve().unwrap()
        };
        let seq = run_train(&resolve(1, &dir.path().join("seq"))).unwrap();
        let par = run_train(&resolve(3, &dir.path().join("par"))).unwrap();
        assert_eq!(seq.folds.len(), 3);
        assert_eq!(seq, par);
        let kv_a = fs::read(dir.path().join("seq/summary.kv")).unwrap();
        let kv_b = fs::read(dir.path().join("par/summary.kv")).unwrap();
        assert_eq!(kv_a, kv_b);
    }
}
