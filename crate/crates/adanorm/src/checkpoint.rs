//! Versioned JSON checkpoints: every named parameter tensor, the
//! normalizer's fitted state, and enough metadata (model config, dims,
//! fold, seed, config echo) to rebuild the exact inference pipeline.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};
use crate::normalize::{BatchNormState, DainLayer, DainMode, GlobalStats, Normalizer};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const CHECKPOINT_FORMAT: &str = "adanorm.checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedParam {
    pub name: String,
    pub group: String,
    pub value: Tensor,
}

/// Normalizer state that lives outside the parameter store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SavedNormalizer {
    None,
    Zscore(GlobalStats),
    SampleAvg,
    Instance,
    BatchNorm(BatchNormState),
    Dain { mode: DainMode },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub l: usize,
    pub d: usize,
    pub n_classes: usize,
    pub fold: usize,
    pub seed: u64,
    /// Verbatim copy of the resolved experiment config, for reruns.
    pub config_echo: String,
    pub normalizer: SavedNormalizer,
    pub params: Vec<SavedParam>,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn capture(
        store: &ParamStore,
        normalizer: &Normalizer,
        model: &ModelConfig,
        l: usize,
        n_classes: usize,
        fold: usize,
        seed: u64,
        config_echo: &str,
    ) -> Result<Checkpoint> {
        let saved_norm = match normalizer {
            Normalizer::None => SavedNormalizer::None,
            Normalizer::Zscore(stats) => SavedNormalizer::Zscore(stats.clone()),
            Normalizer::SampleAvg => SavedNormalizer::SampleAvg,
            Normalizer::Instance => SavedNormalizer::Instance,
            Normalizer::BatchNorm(state) => SavedNormalizer::BatchNorm(state.clone()),
            Normalizer::Dain { mode, .. } => SavedNormalizer::Dain { mode: *mode },
        };
        let d = dim_of(normalizer, store)?;
        let params = store
            .iter()
            .map(|(_, p)| SavedParam {
                name: p.name.clone(),
                group: p.group.label().to_string(),
                value: p.value.clone(),
            })
            .collect();
        Ok(Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: *model,
            l,
            d,
            n_classes,
            fold,
            seed,
            config_echo: config_echo.to_string(),
            normalizer: saved_norm,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {}", path.display(), e)))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "{}: not a checkpoint (format '{}')",
                path.display(),
                ckpt.format
            )));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported version {}",
                path.display(),
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    /// Rebuilds the store, model, and normalizer, then overwrites every
    /// parameter with its saved tensor (matched by name, all-or-nothing).
    pub fn restore(&self) -> Result<(ParamStore, Model, Normalizer)> {
        let mut store = ParamStore::new();
        // the rng only shapes throwaway init values; everything it touches
        // is overwritten below
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let normalizer = match &self.normalizer {
            SavedNormalizer::None => Normalizer::None,
            SavedNormalizer::Zscore(stats) => Normalizer::Zscore(stats.clone()),
            SavedNormalizer::SampleAvg => Normalizer::SampleAvg,
            SavedNormalizer::Instance => Normalizer::Instance,
            SavedNormalizer::BatchNorm(state) => Normalizer::BatchNorm(state.clone()),
            SavedNormalizer::Dain { mode } => Normalizer::Dain {
                layer: DainLayer::new(&mut store, self.d, &mut rng),
                mode: *mode,
            },
        };
        let model = self
            .model
            .build(&mut store, self.l, self.d, self.n_classes, &mut rng)?;
        if store.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, rebuilt pipeline has {}",
                self.params.len(),
                store.len()
            )));
        }
        for saved in &self.params {
            let id = store.find(&saved.name).ok_or_else(|| {
                Error::Checkpoint(format!("unknown parameter '{}'", saved.name))
            })?;
            if store.get(id).group.label() != saved.group {
                return Err(Error::Checkpoint(format!(
                    "parameter '{}' group mismatch",
                    saved.name
                )));
            }
            store
                .set_value(id, saved.value.clone())
                .map_err(|e| Error::Checkpoint(format!("'{}': {}", saved.name, e)))?;
        }
        Ok((store, model, normalizer))
    }
}

fn dim_of(normalizer: &Normalizer, store: &ParamStore) -> Result<usize> {
    Ok(match normalizer {
        Normalizer::Zscore(stats) => stats.dim(),
        Normalizer::BatchNorm(state) => state.dim(),
        Normalizer::Dain { layer, .. } => layer.dim(),
        _ => {
            // stateless normalizer: take the width from the model's first
            // parameter if possible, else demand it from the caller side
            store
                .iter()
                .next()
                .map(|(_, p)| p.value.shape().last().copied().unwrap_or(0))
                .unwrap_or(0)
        }
    })
}

/// Width used when capturing checkpoints of stateless-normalizer runs,
/// where the store alone cannot answer.
#[allow(clippy::too_many_arguments)]
pub fn capture_with_dim(
    store: &ParamStore,
    normalizer: &Normalizer,
    model: &ModelConfig,
    l: usize,
    d: usize,
    n_classes: usize,
    fold: usize,
    seed: u64,
    config_echo: &str,
) -> Result<Checkpoint> {
    let mut ckpt = Checkpoint::capture(
        store, normalizer, model, l, n_classes, fold, seed, config_echo,
    )?;
    ckpt.d = d;
    Ok(ckpt)
}
