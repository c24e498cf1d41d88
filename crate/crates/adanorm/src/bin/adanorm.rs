//! Command-line front end: train, evaluate, gradcheck, and synth
//! subcommands over INI-style experiment configs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use adanorm::config::{ConfigBuilder, ExperimentConfig, PRESET_NAMES};
use adanorm::error::Error;
use adanorm::experiment::{run_evaluate, run_synth, run_train};
use adanorm::gradcheck::{gradcheck_sweep, run_gradcheck, GradcheckSpec};
use adanorm::models::ModelKind;
use adanorm::normalize::DainMode;

#[derive(Parser)]
#[command(
    name = "adanorm",
    about = "Adaptive input normalization for time-series classifiers",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config sources shared by the data-driven subcommands. Precedence, lowest
/// to highest: built-in defaults, --preset, ADANORM_SEED, --config file,
/// explicit flags / --set overrides.
#[derive(Args)]
struct ConfigArgs {
    /// INI config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named hyper-parameter preset (fi2010-mlp, fi2010-cnn, fi2010-rnn, power)
    #[arg(long)]
    preset: Option<String>,
    /// Override a config key, e.g. --set training.epochs=5 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Override training.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override output.dir
    #[arg(long)]
    output: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self, extra: &[(String, String)]) -> Result<ExperimentConfig, Error> {
        let mut b = ConfigBuilder::new();
        if let Some(name) = &self.preset {
            if !PRESET_NAMES.contains(&name.as_str()) {
                return Err(Error::Config(format!(
                    "preset: unknown preset '{}' (expected one of {})",
                    name,
                    PRESET_NAMES.join(", ")
                )));
            }
            b.apply_preset(name)?;
        }
        b.apply_env_seed(std::env::var("ADANORM_SEED").ok().as_deref())?;
        if let Some(path) = &self.config {
            b.apply_file(path)?;
        }
        for kv in &self.sets {
            let (key, value) = kv.split_once('=').ok_or_else(|| {
                Error::Config(format!("--set expects KEY=VALUE, got '{}'", kv))
            })?;
            b.set(key.trim(), value.trim())?;
        }
        if let Some(seed) = self.seed {
            b.set("training.seed", seed.to_string())?;
        }
        if let Some(dir) = &self.output {
            b.set("output.dir", dir.display().to_string())?;
        }
        for (key, value) in extra {
            b.set(key, value.clone())?;
        }
        b.resolve()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train on the configured dataset; writes checkpoints, logs, and a
    /// metrics summary under the output dir
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Override training.epochs
        #[arg(long)]
        epochs: Option<usize>,
        /// Parallel fold workers (overrides training.jobs)
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Evaluate a checkpoint on its fold's test split
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint written by `train`
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also evaluate with every feature shifted by MULT times its
        /// training mean (3 is the usual robustness probe)
        #[arg(long, value_name = "MULT")]
        shift: Option<f64>,
    },
    /// Check analytic gradients against central finite differences
    Gradcheck {
        /// mlp, cnn, gru, or all
        #[arg(long, default_value = "all")]
        model: String,
        /// shift, shift_scale, full, or all
        #[arg(long, default_value = "all")]
        mode: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Test fixture: corrupt one analytic gradient so the harness must
        /// report a failure
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Generate the synthetic two-mode dataset as CSV files
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Rows per day per mode (overrides dataset.rows_per_day)
        #[arg(long)]
        rows: Option<usize>,
        /// Also emit a test copy with features shifted by MULT times
        /// their mean
        #[arg(long, value_name = "MULT")]
        shift_mult: Option<f64>,
    },
}

fn cmd_train(cfg: &ConfigArgs, epochs: Option<usize>, jobs: Option<usize>) -> Result<(), Error> {
    let mut extra = Vec::new();
    if let Some(e) = epochs {
        extra.push(("training.epochs".to_string(), e.to_string()));
    }
    if let Some(j) = jobs {
        extra.push(("training.jobs".to_string(), j.to_string()));
    }
    let cfg = cfg.resolve(&extra)?;
    let summary = run_train(&cfg)?;
    print!("{}", summary.table());
    println!("wrote {}", cfg.output_dir.display());
    Ok(())
}

fn cmd_evaluate(cfg: &ConfigArgs, checkpoint: &Path, shift: Option<f64>) -> Result<(), Error> {
    let cfg = cfg.resolve(&[])?;
    let outcome = run_evaluate(&cfg, checkpoint, shift.map(|m| (m, Vec::new())))?;
    println!("fold {} clean:", outcome.fold);
    println!("{}", outcome.clean);
    if let Some(shifted) = &outcome.shifted {
        println!("shifted (x{} mean):", shift.unwrap_or_default());
        println!("{}", shifted);
        println!(
            "accuracy delta: {:+.4}",
            shifted.accuracy - outcome.clean.accuracy
        );
    }
    Ok(())
}

fn parse_models(s: &str) -> Result<Vec<ModelKind>, Error> {
    if s == "all" {
        Ok(vec![ModelKind::Mlp, ModelKind::Cnn, ModelKind::Gru])
    } else {
        Ok(vec![ModelKind::from_label(s)?])
    }
}

fn parse_modes(s: &str) -> Result<Vec<DainMode>, Error> {
    if s == "all" {
        Ok(vec![DainMode::Shift, DainMode::ShiftScale, DainMode::Full])
    } else {
        Ok(vec![DainMode::from_label(s)?])
    }
}

fn cmd_gradcheck(model: &str, mode: &str, seed: u64, corrupt: bool) -> Result<bool, Error> {
    let reports = if model == "all" && mode == "all" {
        gradcheck_sweep(seed, corrupt)?
    } else {
        let mut reports = Vec::new();
        for m in parse_models(model)? {
            for dm in parse_modes(mode)? {
                let mut spec = GradcheckSpec::new(m, dm, seed);
                spec.corrupt = corrupt;
                reports.push(run_gradcheck(&spec)?);
            }
        }
        reports
    };
    let mut all_passed = true;
    for r in &reports {
        println!("{}", r);
        all_passed &= r.passed();
    }
    println!(
        "{}: {} of {} checks passed",
        if all_passed { "ok" } else { "FAILED" },
        reports.iter().filter(|r| r.passed()).count(),
        reports.len()
    );
    Ok(all_passed)
}

fn cmd_synth(cfg: &ConfigArgs, rows: Option<usize>, shift_mult: Option<f64>) -> Result<(), Error> {
    let mut extra = vec![("dataset.source".to_string(), "synthetic".to_string())];
    if let Some(r) = rows {
        extra.push(("dataset.rows_per_day".to_string(), r.to_string()));
    }
    if let Some(m) = shift_mult {
        extra.push(("dataset.shift_mult".to_string(), m.to_string()));
    }
    let cfg = cfg.resolve(&extra)?;
    let files = run_synth(&cfg)?;
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Parse { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { cfg, epochs, jobs } => cmd_train(cfg, *epochs, *jobs),
        Command::Evaluate { cfg, checkpoint, shift } => cmd_evaluate(cfg, checkpoint, *shift),
        Command::Gradcheck { model, mode, seed, corrupt } => {
            match cmd_gradcheck(model, mode, *seed, *corrupt) {
                Ok(true) => Ok(()),
                Ok(false) => return ExitCode::from(1),
                Err(e) => Err(e),
            }
        }
        Command::Synth { cfg, rows, shift_mult } => cmd_synth(cfg, *rows, *shift_mult),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err);
            ExitCode::from(exit_code_for(&err))
        }
    }
}
