//! Run configuration file: one JSON document shared by all
//! subcommands. Unknown keys are rejected everywhere.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use framefuse::calculator::CalculatorConfig;
use framefuse::data::SynthConfig;
use framefuse::train::TrainConfig;

fn default_grad_check_h() -> f64 {
    1e-5
}

fn default_grad_check_tol() -> f64 {
    1e-4
}

fn default_grad_check_batch() -> usize {
    3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckSection {
    pub h: f64,
    pub tol: f64,
    pub batch: usize,
}

impl Default for GradCheckSection {
    fn default() -> Self {
        Self {
            h: default_grad_check_h(),
            tol: default_grad_check_tol(),
            batch: default_grad_check_batch(),
        }
    }
}

/// The JSON run configuration. Train-related fields mirror
/// [`TrainConfig`]; path fields point at inputs/outputs.
#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub calculator: Option<CalculatorConfig>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub temperature: Option<f64>,
    pub learnable_temperature: Option<bool>,
    pub frames: Option<usize>,
    pub dim: Option<usize>,
    pub seed: Option<u64>,
    pub early_stop_t2v_r1: Option<f64>,
    /// Dataset manifest path.
    pub dataset: Option<PathBuf>,
    /// Checkpoint path (eval / dump-weights input).
    pub checkpoint: Option<PathBuf>,
    /// Output path; a directory for gen-data/train/sweep-ratio, a file
    /// for eval/dump-weights/analyze.
    pub out: Option<PathBuf>,
    /// Cosine (true) vs raw dot scoring where applicable.
    pub normalize: Option<bool>,
    pub synth: Option<SynthConfig>,
    pub grad_check: Option<GradCheckSection>,
    pub sweep_ratios: Option<Vec<usize>>,
}

impl RunConfigFile {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfigFile = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    /// Effective seed after a CLI override.
    pub fn seed(&self, override_seed: Option<u64>) -> u64 {
        override_seed.or(self.seed).unwrap_or(0)
    }

    /// Builds the training configuration, requiring `calculator`.
    pub fn train_config(&self, override_seed: Option<u64>) -> Result<TrainConfig> {
        let Some(calculator) = self.calculator.clone() else {
            bail!("config is missing \"calculator\"");
        };
        let config = TrainConfig {
            calculator,
            epochs: self.epochs.unwrap_or(5),
            batch_size: self.batch_size.unwrap_or(128),
            learning_rate: self.learning_rate.unwrap_or(1e-4),
            temperature: self.temperature.unwrap_or(0.05),
            learnable_temperature: self.learnable_temperature.unwrap_or(false),
            frames: self.frames.unwrap_or(12),
            dim: self.dim.unwrap_or(32),
            seed: self.seed(override_seed),
            early_stop_t2v_r1: self.early_stop_t2v_r1,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn require_dataset(&self) -> Result<&PathBuf> {
        self.dataset
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("config is missing \"dataset\""))
    }
}
