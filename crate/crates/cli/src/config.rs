use std::path::{Path, PathBuf};

use advrank::adversarial::TrainConfig;
use advrank::data::{Split, SynthConfig};
use advrank::model::{ModelConfig, ScoreMode};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Model hyperparameters; the vocabulary size comes from the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub levels: usize,
    pub channels: usize,
    pub compare_hidden: usize,
    pub match_dim: usize,
    pub aggregate_hidden: usize,
    pub mode: ScoreMode,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            embed_dim: m.embed_dim,
            levels: m.levels,
            channels: m.channels,
            compare_hidden: m.compare_hidden,
            match_dim: m.match_dim,
            aggregate_hidden: m.aggregate_hidden,
            mode: m.mode,
            dropout: m.dropout,
        }
    }
}

impl ModelSection {
    pub fn to_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            levels: self.levels,
            channels: self.channels,
            compare_hidden: self.compare_hidden,
            match_dim: self.match_dim,
            aggregate_hidden: self.aggregate_hidden,
            mode: self.mode,
            dropout: self.dropout,
        }
    }
}

/// Everything a command needs. Read from TOML, overridden by flags, archived with the outputs.
///
/// `seed` is copied into the training and synthetic-corpus settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<String>,
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub split: Split,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            corpus: None,
            embeddings: None,
            checkpoint: None,
            split: Split::Test,
            out: None,
            seed: 0,
            model: ModelSection::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }

    /// Propagates the shared seed and checks the sections a command relies on.
    pub fn finalize(&mut self) -> Result<(), CliError> {
        self.train.seed = self.seed;
        self.synth.seed = self.seed;
        self.train.validate()?;
        self.model.to_config(1).validate()?;
        Ok(())
    }

    pub fn require_out(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Config("missing output path (--out or `out`)".into()))
    }

    pub fn require_corpus(&self) -> Result<&Path, CliError> {
        self.corpus
            .as_deref()
            .ok_or_else(|| CliError::Config("missing corpus path (--corpus or `corpus`)".into()))
    }

    pub fn require_checkpoint(&self) -> Result<&Path, CliError> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| CliError::Config("missing checkpoint path (--checkpoint or `checkpoint`)".into()))
    }

    /// Writes the effective configuration to `dir/config.toml`.
    pub fn archive(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::write(dir.join("config.toml"), self.to_toml()?)?;
        Ok(())
    }
}
