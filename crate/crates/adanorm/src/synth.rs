//! Synthetic two-mode market generator: two correlated random walks at
//! very different price levels (e.g. 1 and 100) sharing the same
//! block-wise drift process. Built for controlled experiments where the
//! right answer is known: per-window normalization can solve the task,
//! global statistics cannot.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::RawSeries;
use crate::error::{Error, Result};

/// One walk: a price level and a multiplier on the shared step-noise scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeSpec {
    pub level: f64,
    pub noise: f64,
}

/// Generator knobs. `Default` gives the frozen two-mode (1, 100) task used
/// by the experiment suite.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub modes: Vec<ModeSpec>,
    pub days_train: usize,
    pub days_test: usize,
    /// Rows per day per mode.
    pub rows_per_day: usize,
    pub seed: u64,
    /// Drift blocks: length, per-step drift magnitude, per-step noise.
    pub block_len: usize,
    pub drift: f64,
    pub step_noise: f64,
    /// If set, test features are shifted by `mult` times their own mean
    /// (3.0 makes every feature's mean quadruple).
    pub shift_mult: Option<f64>,
}

/// Feature count emitted per row.
pub const SYNTH_DIM: usize = 6;
/// Lookback of the price-momentum feature.
const MOMENTUM_K: usize = 5;
/// Scale of the within-block noise on the two slow book-keeping features,
/// relative to the price level. Small enough to be quiet next to the price
/// walk, so only per-window standardization blows it up to full amplitude.
const JUNK_JITTER: f64 = 1.0e-5;
/// Default label horizon and threshold matched to the drift scale.
pub const SYNTH_HORIZON: usize = 10;
pub const SYNTH_THETA: f64 = 4.0e-3;
/// Default window length.
pub const SYNTH_WINDOW: usize = 15;

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            modes: vec![
                ModeSpec { level: 1.0, noise: 1.0 },
                ModeSpec { level: 100.0, noise: 1.0 },
            ],
            days_train: 2,
            days_test: 2,
            rows_per_day: 1300,
            seed: 7,
            block_len: 25,
            drift: 2.0e-3,
            step_noise: 5.0e-4,
            shift_mult: None,
        }
    }
}

impl SyntheticSpec {
    pub fn new(seed: u64) -> Self {
        SyntheticSpec { seed, ..SyntheticSpec::default() }
    }
}

/// Number of slow book-keeping (junk) feature channels.
const JUNK_CHANNELS: usize = 2;

/// Per-day drift schedule: piecewise-constant drift in {-drift, 0, +drift}
/// plus per-block offsets used by the book-keeping features.
fn day_schedule(
    spec: &SyntheticSpec,
    rng: &mut ChaCha8Rng,
) -> Vec<(f64, [f64; JUNK_CHANNELS])> {
    let offset_dist = Normal::new(1.0, 0.25).expect("valid normal");
    let mut rows = Vec::with_capacity(spec.rows_per_day);
    while rows.len() < spec.rows_per_day {
        let dir = match rng.random_range(0..3u32) {
            0 => -1.0,
            1 => 0.0,
            _ => 1.0,
        };
        let mut offsets = [0.0; JUNK_CHANNELS];
        for o in &mut offsets {
            *o = offset_dist.sample(rng);
        }
        let n = spec.block_len.min(spec.rows_per_day - rows.len());
        for _ in 0..n {
            rows.push((dir * spec.drift, offsets));
        }
    }
    rows
}

/// Generates the train and test series. Each day contributes one block of
/// rows per mode; blocks carry distinct day ids so windows never straddle
/// two walks. Labels are left to `label_windows_midprice` on the target
/// (price) column.
pub fn synth_bimodal(spec: &SyntheticSpec) -> Result<(RawSeries, RawSeries)> {
    if spec.modes.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 modes, got {}",
            spec.modes.len()
        )));
    }
    if spec.rows_per_day == 0 || spec.days_train == 0 || spec.days_test == 0 {
        return Err(Error::Config("degenerate spec: zero rows or days".into()));
    }
    if spec.block_len == 0 {
        return Err(Error::Config("block length must be at least 1".into()));
    }
    for m in &spec.modes {
        if m.level <= 0.0 || !m.level.is_finite() {
            return Err(Error::Config(format!("mode level must be positive, got {}", m.level)));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise_dist = Normal::new(0.0, 1.0).expect("valid normal");
    let n_modes = spec.modes.len();
    let mut next_day_id: i64 = 1;

    let mut build_split = |days: usize, rng: &mut ChaCha8Rng| -> Result<RawSeries> {
        let cap = days * n_modes * spec.rows_per_day;
        let mut rows = Vec::with_capacity(cap * SYNTH_DIM);
        let mut target = Vec::with_capacity(cap);
        let mut day_ids = Vec::with_capacity(cap);
        for _ in 0..days {
            // one drift schedule shared by every mode of the day
            let schedule = day_schedule(spec, rng);
            for mode in &spec.modes {
                let day_id = next_day_id;
                next_day_id += 1;
                let mut p = mode.level;
                let mut prev_p = p;
                let mut recent: Vec<f64> = Vec::with_capacity(MOMENTUM_K);
                for &(drift, offsets) in &schedule {
                    let eps: f64 = noise_dist.sample(rng) * spec.step_noise * mode.noise;

                    if recent.len() == MOMENTUM_K {
                        recent.remove(0);
                    }
                    recent.push(p);
                    let ma = recent.iter().sum::<f64>() / recent.len() as f64;

                    rows.push(p); // f0: price
                    rows.push(100.0 * p.ln()); // f1: log price, percent units
                    rows.push(p - ma); // f2: price minus short moving average
                    rows.push(p - prev_p); // f3: last price change
                    for &offset in &offsets {
                        // slow book-keeping channels: near-constant per block
                        let jitter: f64 = noise_dist.sample(rng) * JUNK_JITTER;
                        rows.push(mode.level * (offset + jitter));
                    }
                    target.push(p);
                    day_ids.push(day_id);

                    prev_p = p;
                    p *= 1.0 + drift + eps;
                }
            }
        }
        RawSeries::new(SYNTH_DIM, rows, target, day_ids, None)
    };

    let train = build_split(spec.days_train, &mut rng)?;
    let mut test = build_split(spec.days_test, &mut rng)?;

    if let Some(mult) = spec.shift_mult {
        shift_features(&mut test, mult);
    }
    Ok((train, test))
}

/// Adds `mult` times each feature's own mean to every value of that
/// feature. Targets (and therefore labels) are untouched: the shift models
/// a measurement-level distribution change, not different dynamics.
pub fn shift_features(series: &mut RawSeries, mult: f64) {
    let d = series.d;
    let t = series.len();
    if t == 0 {
        return;
    }
    let mut means = vec![0.0; d];
    for row in series.rows.chunks(d) {
        for (k, v) in row.iter().enumerate() {
            means[k] += v;
        }
    }
    for m in &mut means {
        *m /= t as f64;
    }
    for row in series.rows.chunks_mut(d) {
        for (k, v) in row.iter_mut().enumerate() {
            *v += mult * means[k];
        }
    }
}
