use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use fcgaga_core::model::{GateVariant, ModelConfig, TimeFeatureSpec};

/// One flat config file drives every subcommand. Unknown keys are
/// rejected so an ablation typo cannot silently fall back to a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: PathBuf,
    /// "csv" or "binary_cache"
    pub dataset_format: String,
    pub output_dir: PathBuf,

    pub history: usize,
    pub horizon: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub fc_layers: usize,
    pub blocks: usize,
    pub layers: usize,
    pub epsilon: f64,
    pub gate_variant: String,
    pub time_of_day: bool,
    pub day_of_week: bool,

    pub epochs: u32,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub deterministic: bool,

    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::from("panel.csv"),
            dataset_format: "csv".into(),
            output_dir: PathBuf::from("out"),
            history: 12,
            horizon: 12,
            embedding_dim: 64,
            hidden_dim: 128,
            fc_layers: 3,
            blocks: 2,
            layers: 3,
            epsilon: 10.0,
            gate_variant: "learnable_per_layer".into(),
            time_of_day: true,
            day_of_week: false,
            epochs: 60,
            batches_per_epoch: 800,
            batch_size: 4,
            weight_decay: 1e-5,
            seed: 0,
            deterministic: true,
            train_fraction: 0.7,
            val_fraction: 0.1,
            test_fraction: 0.2,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)?;
        std::fs::write(path, text)
            .with_context(|| format!("writing config {}", path.display()))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset_format != "csv" && self.dataset_format != "binary_cache" {
            bail!("dataset_format must be \"csv\" or \"binary_cache\"");
        }
        GateVariant::parse(&self.gate_variant)
            .map_err(|e| anyhow::anyhow!("gate_variant: {e}"))?;
        if self.epochs == 0 || self.batches_per_epoch == 0 || self.batch_size == 0 {
            bail!("epochs, batches_per_epoch and batch_size must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            bail!("weight_decay must be >= 0");
        }
        let frac_sum = self.train_fraction + self.val_fraction + self.test_fraction;
        if self.train_fraction <= 0.0
            || self.val_fraction <= 0.0
            || self.test_fraction <= 0.0
            || (frac_sum - 1.0).abs() > 1e-9
        {
            bail!("split fractions must be positive and sum to 1");
        }
        // full structural check happens once the node count is known
        self.model_config(1)?;
        Ok(())
    }

    /// Instantiate the model config for a panel with `nodes` sensors.
    pub fn model_config(&self, nodes: usize) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            nodes,
            history: self.history,
            horizon: self.horizon,
            embedding_dim: self.embedding_dim,
            hidden_dim: self.hidden_dim,
            fc_layers: self.fc_layers,
            blocks: self.blocks,
            layers: self.layers,
            epsilon: self.epsilon,
            gate_variant: GateVariant::parse(&self.gate_variant)
                .map_err(|e| anyhow::anyhow!("gate_variant: {e}"))?,
            time_features: TimeFeatureSpec {
                time_of_day: self.time_of_day,
                day_of_week: self.day_of_week,
            },
        };
        cfg.validate().map_err(|e| anyhow::anyhow!("config: {e}"))?;
        Ok(cfg)
    }

    pub fn split_spec(&self) -> fcgaga_core::data::SplitSpec {
        fcgaga_core::data::SplitSpec {
            train: self.train_fraction,
            val: self.val_fraction,
            test: self.test_fraction,
        }
    }
}
