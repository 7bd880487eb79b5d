use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fsmt_core::hyperopt::SearchSpace;
use fsmt_core::metric::MatchMode;
use fsmt_core::mlm::MaskConfig;
use fsmt_core::model::{ControlPlacement, ModelConfig, TrainConfig, Vocabulary};
use fsmt_core::textnorm::NormalizationConfig;
use fsmt_service::ServiceConfig;

use crate::error::{CliError, Context};

/// Architecture settings; vocabulary sizes come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelShape {
    pub seq_len: usize,
    pub embed_dim: usize,
    pub latent_dim: usize,
    pub num_heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub control: bool,
    pub control_placement: ControlPlacement,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            seq_len: 20,
            embed_dim: 32,
            latent_dim: 64,
            num_heads: 4,
            encoder_layers: 1,
            decoder_layers: 1,
            control: true,
            control_placement: ControlPlacement::Prepend,
        }
    }
}

impl ModelShape {
    pub fn to_config(&self, src: &Vocabulary, tgt: &Vocabulary) -> ModelConfig {
        let mut cfg = ModelConfig::new(self.embed_dim, self.latent_dim, self.num_heads, self.seq_len)
            .with_vocab_sizes(src.len(), tgt.len());
        cfg.encoder_layers = self.encoder_layers;
        cfg.decoder_layers = self.decoder_layers;
        cfg.control = self.control;
        cfg.control_placement = self.control_placement;
        cfg
    }
}

/// Pipeline settings read from `--config`. Seeds inside nested sections are
/// ignored; every stage seed is derived from `seed`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub contrastive: Option<PathBuf>,
    pub parallel: Option<PathBuf>,
    pub work_dir: Option<PathBuf>,
    pub seed: u64,
    pub normalization: NormalizationConfig,
    pub validation_fraction: Option<f64>,
    pub min_freq: Option<usize>,
    pub model: ModelShape,
    pub train: TrainConfig,
    pub search: SearchSpace,
    pub mask: MaskConfig,
    pub metric_mode: MatchMode,
    pub service: ServiceConfig,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).category("missing-file", || format!("config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).category("config", || format!("config {}", path.display()))?;
        cfg.normalization
            .validate()
            .category("config", || "normalization".to_string())?;
        Ok(cfg)
    }

    pub fn validation_fraction(&self) -> f64 {
        self.validation_fraction.unwrap_or(0.2)
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq.unwrap_or(1)
    }
}
