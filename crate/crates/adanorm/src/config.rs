//! INI-style experiment configuration: sectioned key=value files, named
//! hyper-parameter presets, and a layered override chain
//! (defaults < preset < ADANORM_SEED < config file < flags).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelKind};
use crate::normalize::DainMode;
use crate::params::WeightInit;
use crate::train::LrGroups;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataSource {
    Csv,
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Midprice,
    Power,
}

impl Task {
    pub fn label(self) -> &'static str {
        match self {
            Task::Midprice => "midprice",
            Task::Power => "power",
        }
    }
}

/// Optional global z-scoring applied to the data before the configured
/// normalizer. Exists so the no-stacking rule has something to check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prescale {
    None,
    Zscore,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    None,
    Zscore,
    SampleAvg,
    BatchNorm,
    Instance,
    Dain,
}

impl NormKind {
    pub fn label(self) -> &'static str {
        match self {
            NormKind::None => "none",
            NormKind::Zscore => "zscore",
            NormKind::SampleAvg => "sample_avg",
            NormKind::BatchNorm => "batchnorm",
            NormKind::Instance => "instance",
            NormKind::Dain => "dain",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Some(match s {
            "none" => NormKind::None,
            "zscore" => NormKind::Zscore,
            "sample_avg" => NormKind::SampleAvg,
            "batchnorm" => NormKind::BatchNorm,
            "instance" => NormKind::Instance,
            "dain" => NormKind::Dain,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub source: DataSource,
    pub path: Option<PathBuf>,
    /// Optional held-out file; otherwise the task's split rule applies.
    pub test_path: Option<PathBuf>,
    pub task: Task,
    pub features: Vec<usize>,
    pub target: Option<usize>,
    pub day: Option<usize>,
    pub label: Option<usize>,
    pub label_offset: i64,
    pub window: usize,
    pub horizon: usize,
    pub theta: f64,
    pub prescale: Prescale,
    /// Synthetic-source knobs.
    pub rows_per_day: Option<usize>,
    pub shift_mult: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub lr: LrGroups,
    /// Parallel fold workers for cmd_train.
    pub jobs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub normalizer: NormKind,
    pub dain_mode: DainMode,
    pub training: TrainingConfig,
    pub output_dir: PathBuf,
}

pub const PRESET_NAMES: [&str; 4] = ["fi2010-mlp", "fi2010-cnn", "fi2010-rnn", "power"];

pub fn preset_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "fi2010-mlp" => {
            "[dataset]\ntask = midprice\nwindow = 15\nhorizon = 10\nlabel_offset = 1\n\
             [model]\nkind = mlp\nhidden = 512\ndropout = 0.5\n\
             [training]\nepochs = 20\nbatch = 128\neta = 1e-4\neta_a = 1e-6\neta_b = 1e-3\neta_c = 10\n"
        }
        "fi2010-cnn" => {
            "[dataset]\ntask = midprice\nwindow = 15\nhorizon = 10\nlabel_offset = 1\n\
             [model]\nkind = cnn\nfilters = 256\nkernel = 3\ndropout = 0.5\n\
             [training]\nepochs = 20\nbatch = 128\neta = 1e-4\neta_a = 1e-2\neta_b = 1e-9\neta_c = 10\n"
        }
        "fi2010-rnn" => {
            "[dataset]\ntask = midprice\nwindow = 15\nhorizon = 10\nlabel_offset = 1\n\
             [model]\nkind = gru\ngru_hidden = 256\ndropout = 0.5\n\
             [training]\nepochs = 20\nbatch = 128\neta = 1e-4\neta_a = 1e-2\neta_b = 1e-8\neta_c = 10\n"
        }
        "power" => {
            "[dataset]\ntask = power\nwindow = 20\n\
             [model]\nkind = mlp\nhidden = 512\ndropout = 0.5\n\
             [training]\nepochs = 20\nbatch = 128\neta = 1e-4\neta_a = 1e-5\neta_b = 1e-2\neta_c = 10\n"
        }
        _ => return None,
    })
}

const KNOWN_KEYS: [&str; 30] = [
    "dataset.source",
    "dataset.path",
    "dataset.test_path",
    "dataset.task",
    "dataset.features",
    "dataset.target",
    "dataset.day",
    "dataset.label",
    "dataset.label_offset",
    "dataset.window",
    "dataset.horizon",
    "dataset.theta",
    "dataset.prescale",
    "dataset.rows_per_day",
    "dataset.shift_mult",
    "model.kind",
    "model.hidden",
    "model.filters",
    "model.kernel",
    "model.gru_hidden",
    "model.dropout",
    "model.init",
    "normalizer.kind",
    "normalizer.mode",
    "training.epochs",
    "training.batch",
    "training.seed",
    "training.jobs",
    "training.eta",
    "training.eta_a",
];
const KNOWN_KEYS_TAIL: [&str; 3] = ["training.eta_b", "training.eta_c", "output.dir"];

fn key_known(key: &str) -> bool {
    KNOWN_KEYS.contains(&key) || KNOWN_KEYS_TAIL.contains(&key)
}

/// Parses sectioned key=value text. Comments start with '#' or ';'.
pub fn parse_ini(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or(Error::Parse {
                line: line_no,
                msg: format!("unterminated section header '{}'", line),
            })?;
            section = Some(name.trim().to_string());
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(Error::Parse {
            line: line_no,
            msg: format!("expected 'key = value', got '{}'", line),
        })?;
        let section = section.as_ref().ok_or(Error::Parse {
            line: line_no,
            msg: "key before any [section] header".into(),
        })?;
        out.push((
            format!("{}.{}", section, key.trim()),
            value.trim().to_string(),
        ));
    }
    Ok(out)
}

/// Accumulates key=value layers; later applications override earlier ones.
#[derive(Clone, Debug, Default)]
pub struct ConfigBuilder {
    map: BTreeMap<String, String>,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        ConfigBuilder::default()
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !key_known(key) {
            return Err(Error::Config(format!("unknown config key '{}'", key)));
        }
        self.map.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn apply_ini_text(&mut self, text: &str) -> Result<()> {
        for (key, value) in parse_ini(text)? {
            self.set(&key, value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("config file {}: {}", path.display(), e)))?;
        self.apply_ini_text(&text)
    }

    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        let text = preset_text(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown preset '{}' (available: {})",
                name,
                PRESET_NAMES.join(", ")
            ))
        })?;
        self.apply_ini_text(text)
    }

    /// ADANORM_SEED: above defaults and presets, below file and flags.
    pub fn apply_env_seed(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            v.trim().parse::<u64>().map_err(|_| {
                Error::Config(format!("ADANORM_SEED: cannot parse '{}' as a seed", v))
            })?;
            self.set("training.seed", v.trim())?;
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let source = match self.get("dataset.source").unwrap_or("csv") {
            "csv" => DataSource::Csv,
            "synthetic" => DataSource::Synthetic,
            other => {
                return Err(Error::Config(format!(
                    "dataset.source: expected csv|synthetic, got '{}'",
                    other
                )))
            }
        };
        let task = match self.get("dataset.task").unwrap_or("midprice") {
            "midprice" => Task::Midprice,
            "power" => Task::Power,
            other => {
                return Err(Error::Config(format!(
                    "dataset.task: expected midprice|power, got '{}'",
                    other
                )))
            }
        };
        let horizon = parse_num::<usize>(self, "dataset.horizon", 10)?;
        // the stationary band widens with the horizon unless pinned
        let default_theta = if horizon == 20 { 2e-4 } else { 1e-4 };
        let theta = parse_num::<f64>(self, "dataset.theta", default_theta)?;
        let window = parse_num::<usize>(self, "dataset.window", 15)?;
        let prescale = match self.get("dataset.prescale").unwrap_or("none") {
            "none" => Prescale::None,
            "zscore" => Prescale::Zscore,
            other => {
                return Err(Error::Config(format!(
                    "dataset.prescale: expected none|zscore, got '{}'",
                    other
                )))
            }
        };

        let dataset = DatasetConfig {
            source,
            path: self.get("dataset.path").map(PathBuf::from),
            test_path: self.get("dataset.test_path").map(PathBuf::from),
            task,
            features: match self.get("dataset.features") {
                Some(s) => parse_columns(s)
                    .map_err(|e| Error::Config(format!("dataset.features: {}", e)))?,
                None => Vec::new(),
            },
            target: parse_opt_num::<usize>(self, "dataset.target")?,
            day: parse_opt_num::<usize>(self, "dataset.day")?,
            label: parse_opt_num::<usize>(self, "dataset.label")?,
            label_offset: parse_num::<i64>(self, "dataset.label_offset", 0)?,
            window,
            horizon,
            theta,
            prescale,
            rows_per_day: parse_opt_num::<usize>(self, "dataset.rows_per_day")?,
            shift_mult: parse_opt_num::<f64>(self, "dataset.shift_mult")?,
        };

        let kind = match self.get("model.kind").unwrap_or("mlp") {
            "mlp" => ModelKind::Mlp,
            "cnn" => ModelKind::Cnn,
            "gru" | "rnn" => ModelKind::Gru,
            other => {
                return Err(Error::Config(format!(
                    "model.kind: expected mlp|cnn|gru, got '{}'",
                    other
                )))
            }
        };
        let mut model = ModelConfig::new(kind);
        model.hidden = parse_num(self, "model.hidden", model.hidden)?;
        model.filters = parse_num(self, "model.filters", model.filters)?;
        model.kernel = parse_num(self, "model.kernel", model.kernel)?;
        model.gru_hidden = parse_num(self, "model.gru_hidden", model.gru_hidden)?;
        model.dropout = parse_num(self, "model.dropout", model.dropout)?;
        model.init = match self.get("model.init").unwrap_or("fan_in_uniform") {
            "fan_in_uniform" => WeightInit::FanInUniform,
            "normal" => WeightInit::Normal,
            other => {
                return Err(Error::Config(format!(
                    "model.init: expected fan_in_uniform|normal, got '{}'",
                    other
                )))
            }
        };

        let normalizer = self.get("normalizer.kind").unwrap_or("dain");
        let normalizer = NormKind::from_label(normalizer).ok_or_else(|| {
            Error::Config(format!(
                "normalizer.kind: expected none|zscore|sample_avg|batchnorm|instance|dain, got '{}'",
                normalizer
            ))
        })?;
        let dain_mode = match self.get("normalizer.mode") {
            Some(s) => DainMode::from_label(s)
                .map_err(|_| Error::Config(format!("normalizer.mode: unknown mode '{}'", s)))?,
            None => DainMode::Full,
        };

        let training = TrainingConfig {
            epochs: parse_num(self, "training.epochs", 20)?,
            batch: parse_num(self, "training.batch", 128)?,
            seed: parse_num(self, "training.seed", 1)?,
            jobs: parse_num(self, "training.jobs", 1)?,
            lr: LrGroups {
                eta: parse_num(self, "training.eta", 1e-4)?,
                eta_a: parse_num(self, "training.eta_a", 1.0)?,
                eta_b: parse_num(self, "training.eta_b", 1.0)?,
                eta_c: parse_num(self, "training.eta_c", 1.0)?,
            },
        };

        let cfg = ExperimentConfig {
            dataset,
            model,
            normalizer,
            dain_mode,
            training,
            output_dir: PathBuf::from(self.get("output.dir").unwrap_or("runs")),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_num<T: std::str::FromStr>(b: &ConfigBuilder, key: &str, default: T) -> Result<T> {
    match b.get(key) {
        None => Ok(default),
        Some(s) => s
            .parse::<T>()
            .map_err(|_| Error::Config(format!("{}: cannot parse '{}'", key, s))),
    }
}

fn parse_opt_num<T: std::str::FromStr>(b: &ConfigBuilder, key: &str) -> Result<Option<T>> {
    match b.get(key) {
        None => Ok(None),
        Some(s) => s
            .parse::<T>()
            .map(Some)
            .map_err(|_| Error::Config(format!("{}: cannot parse '{}'", key, s))),
    }
}

/// "0-3,7,9-10" -> [0,1,2,3,7,9,10]
pub fn parse_columns(s: &str) -> std::result::Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        match part.split_once('-') {
            Some((a, b)) => {
                let lo: usize =
                    a.trim().parse().map_err(|_| format!("bad range start '{}'", a))?;
                let hi: usize =
                    b.trim().parse().map_err(|_| format!("bad range end '{}'", b))?;
                if hi < lo {
                    return Err(format!("empty range '{}'", part));
                }
                out.extend(lo..=hi);
            }
            None => out.push(part.parse().map_err(|_| format!("bad column '{}'", part))?),
        }
    }
    if out.is_empty() {
        return Err("no columns listed".into());
    }
    Ok(out)
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.source == DataSource::Csv {
            if d.path.is_none() {
                return Err(Error::Config(
                    "dataset.path: required when dataset.source = csv".into(),
                ));
            }
            if d.features.is_empty() {
                return Err(Error::Config(
                    "dataset.features: required when dataset.source = csv".into(),
                ));
            }
            if d.target.is_none() {
                return Err(Error::Config(
                    "dataset.target: required when dataset.source = csv".into(),
                ));
            }
        }
        if d.window == 0 {
            return Err(Error::Config("dataset.window: must be at least 1".into()));
        }
        if d.task == Task::Midprice && d.horizon == 0 {
            return Err(Error::Config("dataset.horizon: must be at least 1".into()));
        }
        if d.theta <= 0.0 || !d.theta.is_finite() {
            return Err(Error::Config(format!(
                "dataset.theta: must be positive, got {}",
                d.theta
            )));
        }
        if self.normalizer == NormKind::Dain && d.prescale != Prescale::None {
            return Err(Error::Config(
                "dataset.prescale: cannot stack an input normalizer in front of dain"
                    .into(),
            ));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::Config(format!(
                "model.dropout: must be in [0,1), got {}",
                self.model.dropout
            )));
        }
        if self.model.kernel == 0 || self.model.hidden == 0 || self.model.gru_hidden == 0 {
            return Err(Error::Config("model sizes must be at least 1".into()));
        }
        let t = &self.training;
        if t.batch == 0 {
            return Err(Error::Config("training.batch: must be at least 1".into()));
        }
        if t.jobs == 0 {
            return Err(Error::Config("training.jobs: must be at least 1".into()));
        }
        for (key, v) in [
            ("training.eta", t.lr.eta),
            ("training.eta_a", t.lr.eta_a),
            ("training.eta_b", t.lr.eta_b),
            ("training.eta_c", t.lr.eta_c),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{}: must be positive, got {}", key, v)));
            }
        }
        Ok(())
    }

    /// Canonical INI echo of the fully-resolved configuration; feeding it
    /// back through the parser reproduces this config exactly.
    pub fn to_ini(&self) -> String {
        let d = &self.dataset;
        let mut s = String::from("[dataset]\n");
        s.push_str(&format!(
            "source = {}\n",
            match d.source {
                DataSource::Csv => "csv",
                DataSource::Synthetic => "synthetic",
            }
        ));
        if let Some(p) = &d.path {
            s.push_str(&format!("path = {}\n", p.display()));
        }
        if let Some(p) = &d.test_path {
            s.push_str(&format!("test_path = {}\n", p.display()));
        }
        s.push_str(&format!("task = {}\n", d.task.label()));
        if !d.features.is_empty() {
            let list: Vec<String> = d.features.iter().map(|c| c.to_string()).collect();
            s.push_str(&format!("features = {}\n", list.join(",")));
        }
        if let Some(c) = d.target {
            s.push_str(&format!("target = {}\n", c));
        }
        if let Some(c) = d.day {
            s.push_str(&format!("day = {}\n", c));
        }
        if let Some(c) = d.label {
            s.push_str(&format!("label = {}\n", c));
        }
        s.push_str(&format!("label_offset = {}\n", d.label_offset));
        s.push_str(&format!("window = {}\n", d.window));
        s.push_str(&format!("horizon = {}\n", d.horizon));
        s.push_str(&format!("theta = {}\n", d.theta));
        s.push_str(&format!(
            "prescale = {}\n",
            match d.prescale {
                Prescale::None => "none",
                Prescale::Zscore => "zscore",
            }
        ));
        if let Some(r) = d.rows_per_day {
            s.push_str(&format!("rows_per_day = {}\n", r));
        }
        if let Some(m) = d.shift_mult {
            s.push_str(&format!("shift_mult = {}\n", m));
        }

        s.push_str("\n[model]\n");
        s.push_str(&format!("kind = {}\n", self.model.kind.label()));
        s.push_str(&format!("hidden = {}\n", self.model.hidden));
        s.push_str(&format!("filters = {}\n", self.model.filters));
        s.push_str(&format!("kernel = {}\n", self.model.kernel));
        s.push_str(&format!("gru_hidden = {}\n", self.model.gru_hidden));
        s.push_str(&format!("dropout = {}\n", self.model.dropout));
        s.push_str(&format!(
            "init = {}\n",
            match self.model.init {
                WeightInit::FanInUniform => "fan_in_uniform",
                WeightInit::Normal => "normal",
            }
        ));

        s.push_str("\n[normalizer]\n");
        s.push_str(&format!("kind = {}\n", self.normalizer.label()));
        s.push_str(&format!("mode = {}\n", self.dain_mode.label()));

        let t = &self.training;
        s.push_str("\n[training]\n");
        s.push_str(&format!("epochs = {}\n", t.epochs));
        s.push_str(&format!("batch = {}\n", t.batch));
        s.push_str(&format!("seed = {}\n", t.seed));
        s.push_str(&format!("jobs = {}\n", t.jobs));
        s.push_str(&format!("eta = {}\n", t.lr.eta));
        s.push_str(&format!("eta_a = {}\n", t.lr.eta_a));
        s.push_str(&format!("eta_b = {}\n", t.lr.eta_b));
        s.push_str(&format!("eta_c = {}\n", t.lr.eta_c));

        s.push_str("\n[output]\n");
        s.push_str(&format!("dir = {}\n", self.output_dir.display()));
        s
    }
}
