//! JSON configuration files for training and synthetic data generation.
//! Missing fields take their library defaults; unknown fields are rejected.

use std::path::Path;

use gapbridge_core::synth::SynthSpec;
use gapbridge_core::trainer::{LossWeights, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::embfile::read_json;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeightsFile {
    pub w_map: f64,
    pub w_recons: f64,
    pub w_disti: f64,
}

impl Default for LossWeightsFile {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            w_map: w.map,
            w_recons: w.recons,
            w_disti: w.disti,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfigFile {
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub weight_decay: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub tau: f64,
    pub disti_temp: f64,
    pub loss_weights: LossWeightsFile,
    pub expansion: usize,
    pub init_noise_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfigFile {
    fn default() -> Self {
        Self::from(&TrainConfig::default())
    }
}

impl From<&TrainConfig> for TrainConfigFile {
    fn from(c: &TrainConfig) -> Self {
        Self {
            batch_size: c.batch_size,
            peak_lr: c.peak_lr,
            warmup_steps: c.warmup_steps,
            total_steps: c.total_steps,
            weight_decay: c.weight_decay,
            betas: [c.betas.0, c.betas.1],
            eps: c.eps,
            tau: c.tau,
            disti_temp: c.disti_temp,
            loss_weights: LossWeightsFile {
                w_map: c.loss_weights.map,
                w_recons: c.loss_weights.recons,
                w_disti: c.loss_weights.disti,
            },
            expansion: c.expansion,
            init_noise_scale: c.init_noise_scale,
            seed: c.seed,
        }
    }
}

impl From<&TrainConfigFile> for TrainConfig {
    fn from(f: &TrainConfigFile) -> Self {
        TrainConfig {
            batch_size: f.batch_size,
            peak_lr: f.peak_lr,
            warmup_steps: f.warmup_steps,
            total_steps: f.total_steps,
            weight_decay: f.weight_decay,
            betas: (f.betas[0], f.betas[1]),
            eps: f.eps,
            tau: f.tau,
            disti_temp: f.disti_temp,
            loss_weights: LossWeights {
                map: f.loss_weights.w_map,
                recons: f.loss_weights.w_recons,
                disti: f.loss_weights.w_disti,
            },
            expansion: f.expansion,
            init_noise_scale: f.init_noise_scale,
            seed: f.seed,
        }
    }
}

/// Reads and validates a training config.
pub fn read_train_config(path: &Path) -> Result<TrainConfig> {
    let file: TrainConfigFile = read_json(path)?;
    let cfg = TrainConfig::from(&file);
    cfg.validate().map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(cfg)
}

fn default_clusters() -> usize {
    8
}
fn default_spread() -> f64 {
    0.1
}
fn default_mean_scale() -> f64 {
    0.05
}
fn default_cov_scale() -> f64 {
    0.02
}

/// Input of `gen-synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub dim: usize,
    pub count: usize,
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    #[serde(default = "default_spread")]
    pub cluster_spread: f64,
    #[serde(default = "default_mean_scale")]
    pub bias_mean_scale: f64,
    #[serde(default = "default_cov_scale")]
    pub bias_cov_scale: f64,
    #[serde(default)]
    pub seed: u64,
    /// Unit-normalize the generated images.
    #[serde(default)]
    pub renormalize: bool,
}

impl SynthConfig {
    pub fn spec(&self) -> SynthSpec {
        SynthSpec {
            dim: self.dim,
            count: self.count,
            clusters: self.clusters,
            cluster_spread: self.cluster_spread,
            bias_mean_scale: self.bias_mean_scale,
            bias_cov_scale: self.bias_cov_scale,
            seed: self.seed,
        }
    }
}

pub fn read_synth_config(path: &Path) -> Result<SynthConfig> {
    let cfg: SynthConfig = read_json(path)?;
    cfg.spec().validate().map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let f: TrainConfigFile = serde_json::from_str("{}").unwrap();
        assert_eq!(TrainConfig::from(&f), TrainConfig::default());
    }

    #[test]
    fn partial_override() {
        let f: TrainConfigFile = serde_json::from_str(
            r#"{"total_steps": 10, "warmup_steps": 2, "loss_weights": {"w_disti": 0}}"#,
        )
        .unwrap();
        let c = TrainConfig::from(&f);
        assert_eq!(c.total_steps, 10);
        assert_eq!(c.loss_weights.disti, 0.0);
        assert_eq!(c.loss_weights.map, 1.0);
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(serde_json::from_str::<TrainConfigFile>(r#"{"lr": 1}"#).is_err());
    }

    #[test]
    fn round_trip() {
        let c = TrainConfig {
            seed: 9,
            peak_lr: 1e-3,
            ..Default::default()
        };
        let text = serde_json::to_string(&TrainConfigFile::from(&c)).unwrap();
        let back: TrainConfigFile = serde_json::from_str(&text).unwrap();
        assert_eq!(TrainConfig::from(&back), c);
    }
}
