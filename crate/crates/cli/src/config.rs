use std::path::{Path, PathBuf};

use idtransfer::datagen::CorpusConfig;
use idtransfer::inference::FinetuneConfig;
use idtransfer::objectives::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Everything a run needs. `seed` is the only source of randomness; the
/// corpus and training seeds are derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Held-out transfers listed in `heldout.json` and scored by `eval`.
    pub heldout_count: usize,
    pub corpus: CorpusConfig,
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
    pub finetune: FinetuneConfig,
    pub paths: PathsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct PreprocessConfig {
    /// Manifest index of the mesh the hierarchy is built on and the others
    /// are aligned to.
    pub reference: usize,
}

/// Input overrides; unset entries resolve inside `--out`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            heldout_count: 20,
            corpus: CorpusConfig::default(),
            preprocess: PreprocessConfig::default(),
            train: TrainConfig::default(),
            finetune: FinetuneConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}


impl RunConfig {
    /// Parses TOML, rejecting unknown keys and per-section seeds.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for section in ["corpus", "train"] {
            if raw.get(section).and_then(|s| s.get("seed")).is_some() {
                return Err(CliError::Config(format!(
                    "{section}.seed is derived from the top-level seed and cannot be set"
                )));
            }
        }
        let mut cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.apply_seed(cfg.seed);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.corpus.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let named = |section: &str, e: idtransfer::Error| CliError::Config(format!("[{section}] {e}"));
        self.corpus.validate().map_err(|e| named("corpus", e))?;
        self.train.validate().map_err(|e| named("train", e))?;
        self.finetune.validate().map_err(|e| named("finetune", e))?;
        if self.heldout_count == 0 {
            return Err(CliError::Config("heldout_count must be positive".into()));
        }
        let mut prev = usize::MAX;
        for &n in &self.train.hierarchy_sizes {
            if n == 0 || n >= prev {
                return Err(CliError::Config(
                    "[train] hierarchy_sizes must be positive and strictly decreasing".into(),
                ));
            }
            prev = n;
        }
        Ok(())
    }

    /// Canonical TOML of the effective configuration. The derived
    /// per-section seeds are left out so the text parses back.
    pub fn canonical(&self) -> String {
        let mut table = toml::Table::try_from(self).expect("config serialises");
        for section in ["corpus", "train"] {
            if let Some(toml::Value::Table(t)) = table.get_mut(section) {
                t.remove("seed");
            }
        }
        toml::to_string(&table).expect("table serialises")
    }

    /// SHA-256 of [`RunConfig::canonical`], lowercase hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
