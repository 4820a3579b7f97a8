//! JSON run configuration: architecture, channel, training, evaluation and baseline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline_omp::ClipPolicy;
use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::network::ModelSpec;
use crate::rate::LinkParams;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub warmup_epochs: usize,
    pub snr_db: f64,
    pub seed: u64,
    /// Monte-Carlo draws per hypothesis for the spatial term at evaluation.
    pub eval_mc_samples: usize,
    /// Size of the fixed test set.
    pub test_size: usize,
    /// Samples per evaluation graph.
    pub eval_batch: usize,
    /// Global gradient-norm cap; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    /// Reuse the same pilot noise for a given (batch, sample) slot every epoch.
    pub freeze_pilot_noise: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batches_per_epoch: 200,
            batch_size: 1000,
            lr_init: 5e-4,
            lr_min: 1e-5,
            warmup_epochs: 10,
            snr_db: 10.0,
            seed: 0,
            eval_mc_samples: 1000,
            test_size: 2000,
            eval_batch: 250,
            max_grad_norm: None,
            freeze_pilot_noise: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batches_per_epoch == 0 {
            return Err(Error::config("epochs and batches_per_epoch must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2 for batch normalization"));
        }
        if !(self.lr_min >= 0.0) || !(self.lr_min <= self.lr_init) {
            return Err(Error::config(format!(
                "need 0 <= lr_min ({}) <= lr_init ({})",
                self.lr_min, self.lr_init
            )));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::config("warmup_epochs exceeds epochs"));
        }
        if self.test_size == 0 || self.eval_batch == 0 || self.eval_mc_samples == 0 {
            return Err(Error::config("test_size, eval_batch and eval_mc_samples must be positive"));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                return Err(Error::config("max_grad_norm must be positive"));
            }
        }
        if !self.snr_db.is_finite() {
            return Err(Error::config("snr_db must be finite"));
        }
        Ok(())
    }

    pub fn link(&self) -> LinkParams {
        LinkParams::from_snr_db(self.snr_db)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub grid_tx: usize,
    pub grid_rx: usize,
    pub sparsity: usize,
    /// Finite-feedback budgets; one row each.
    pub feedback_bits: Vec<usize>,
    /// Also emit the unquantized (infinite feedback) row.
    pub infinite_feedback: bool,
    pub clip: ClipPolicy,
    /// Channels evaluated; defaults to the training test-set size when 0.
    pub test_size: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            grid_tx: 64,
            grid_rx: 64,
            sparsity: 16,
            feedback_bits: vec![36],
            infinite_feedback: true,
            clip: ClipPolicy::default(),
            test_size: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: ModelSpec,
    pub channel: ChannelConfig,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            model: ModelSpec::default(),
            channel: ChannelConfig::default(),
            train: TrainConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl RunConfig {
    /// Scaled-down protocol: 30 epochs of 50 batches of 128.
    pub fn desk() -> Self {
        let mut c = RunConfig::default();
        c.train.epochs = 30;
        c.train.batches_per_epoch = 50;
        c.train.batch_size = 128;
        c.train.warmup_epochs = 2;
        c.train.test_size = 500;
        c.train.eval_mc_samples = 200;
        c
    }

    /// Minutes-scale run for checks: 2 epochs of 5 batches of 16.
    pub fn smoke() -> Self {
        let mut c = RunConfig::default();
        c.train.epochs = 2;
        c.train.batches_per_epoch = 5;
        c.train.batch_size = 16;
        c.train.warmup_epochs = 0;
        c.train.test_size = 64;
        c.train.eval_mc_samples = 50;
        c.train.eval_batch = 64;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::config(format!(
                "config schema version {} is not supported (expected {})",
                self.schema_version, CONFIG_SCHEMA_VERSION
            )));
        }
        self.model.validate()?;
        self.channel.validate()?;
        self.train.validate()?;
        let g = &self.model.gsm;
        if self.channel.n_t != g.n_t || self.channel.n_r != g.n_r {
            return Err(Error::config(format!(
                "channel is {}x{} but the GSM array is {}x{}",
                self.channel.n_r, self.channel.n_t, g.n_r, g.n_t
            )));
        }
        if self.baseline.grid_tx == 0 || self.baseline.grid_rx == 0 || self.baseline.sparsity == 0 {
            return Err(Error::config("baseline grids and sparsity must be positive"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {}", path.display(), e)))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for c in [RunConfig::default(), RunConfig::desk(), RunConfig::smoke()] {
            c.validate().unwrap();
            assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        }
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = RunConfig::from_json(r#"{"train": {"epochs": 3, "warmup_epochs": 1}, "model": {"feedback_bits": 6}}"#).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 1000);
        assert_eq!(c.model.feedback_bits, 6);
        assert_eq!(c.model.hidden_dims, vec![2048, 1024, 512]);
    }

    #[test]
    fn inconsistent_configs_rejected() {
        assert!(RunConfig::from_json(r#"{"train": {"lr_min": 1.0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"warmup_epochs": 500}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"channel": {"n_t": 8}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"schema_version": 9}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"epochs": "x"}}"#).is_err());
    }
}
