//! Seeded random search over model shape and batch size, maximizing
//! validation token accuracy.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{encode_pair, train, Example, ModelConfig, TextPair, TrainConfig, TrainError, Vocabulary};
use crate::stage_seed;
use crate::textnorm::NormalizationConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub sequence_length: Vec<usize>,
    pub batch_size: Vec<usize>,
    pub embed_dim: Vec<usize>,
    pub latent_dim: Vec<usize>,
    pub num_heads: Vec<usize>,
    pub trial_budget: usize,
    pub epochs_per_trial: usize,
    pub seed: u64,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            sequence_length: vec![20, 50, 100],
            batch_size: vec![16, 32, 64],
            embed_dim: vec![32, 64, 128],
            latent_dim: vec![64, 128, 256],
            num_heads: vec![2, 4, 8],
            trial_budget: 10,
            epochs_per_trial: 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub sequence_length: usize,
    pub batch_size: usize,
    pub embed_dim: usize,
    pub latent_dim: usize,
    pub num_heads: usize,
}

impl TrialConfig {
    pub fn model_config(&self, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) -> ModelConfig {
        ModelConfig::new(self.embed_dim, self.latent_dim, self.num_heads, self.sequence_length)
            .with_vocab_sizes(src_vocab.len(), tgt_vocab.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrialLogEntry {
    Trial {
        trial: usize,
        config: TrialConfig,
        accuracy: Option<f64>,
        final_train_loss: Option<f64>,
        error: Option<String>,
    },
    Rejected {
        sample: usize,
        config: TrialConfig,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_config: TrialConfig,
    pub best_accuracy: f64,
    pub trial_log: Vec<TrialLogEntry>,
}

impl SearchResult {
    pub fn trials(&self) -> impl Iterator<Item = (&TrialConfig, Option<f64>)> {
        self.trial_log.iter().filter_map(|e| match e {
            TrialLogEntry::Trial { config, accuracy, .. } => Some((config, *accuracy)),
            TrialLogEntry::Rejected { .. } => None,
        })
    }

    /// Writes the log as JSON lines.
    pub fn write_log<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for entry in &self.trial_log {
            serde_json::to_writer(&mut w, entry)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("no valid configuration after {0} samples")]
    NoValidConfig(usize),
    #[error("all {0} trials diverged or failed")]
    AllTrialsFailed(usize),
}

/// Vocabularies and raw pairs; each trial encodes them at its own sequence length.
pub struct SearchData<'a> {
    pub train: &'a [TextPair],
    pub val: &'a [TextPair],
    pub src_vocab: &'a Vocabulary,
    pub tgt_vocab: &'a Vocabulary,
    pub norm: &'a NormalizationConfig,
}

impl SearchData<'_> {
    fn encode(&self, pairs: &[TextPair], cfg: &ModelConfig) -> Vec<Example> {
        pairs
            .iter()
            .map(|p| encode_pair(p, self.src_vocab, self.tgt_vocab, cfg, self.norm))
            .collect()
    }
}

const MAX_SAMPLES_PER_TRIAL: usize = 1000;

/// Draws `trial_budget` valid configurations in order, logging rejected ones.
pub fn sample_trials(space: &SearchSpace) -> Result<(Vec<TrialConfig>, Vec<TrialLogEntry>), SearchError> {
    let choices = [
        ("sequence_length", &space.sequence_length),
        ("batch_size", &space.batch_size),
        ("embed_dim", &space.embed_dim),
        ("latent_dim", &space.latent_dim),
        ("num_heads", &space.num_heads),
    ];
    for (name, values) in choices {
        if values.is_empty() || values.contains(&0) {
            return Err(SearchError::InvalidSpace(format!(
                "{name} needs at least one positive choice"
            )));
        }
    }
    if space.trial_budget == 0 {
        return Err(SearchError::InvalidSpace("trial_budget must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(space.seed, "search-sampler"));
    let mut pick = |v: &[usize]| *v.choose(&mut rng).expect("non-empty");
    let mut trials = Vec::with_capacity(space.trial_budget);
    let mut rejected = Vec::new();
    let limit = MAX_SAMPLES_PER_TRIAL * space.trial_budget;
    let mut sample = 0;
    while trials.len() < space.trial_budget {
        if sample == limit {
            return Err(SearchError::NoValidConfig(sample));
        }
        let config = TrialConfig {
            sequence_length: pick(&space.sequence_length),
            batch_size: pick(&space.batch_size),
            embed_dim: pick(&space.embed_dim),
            latent_dim: pick(&space.latent_dim),
            num_heads: pick(&space.num_heads),
        };
        if !config.embed_dim.is_multiple_of(config.num_heads) {
            rejected.push(TrialLogEntry::Rejected {
                sample,
                config,
                reason: format!(
                    "embed_dim {} not divisible by num_heads {}",
                    config.embed_dim, config.num_heads
                ),
            });
        } else if config.sequence_length < 2 {
            rejected.push(TrialLogEntry::Rejected {
                sample,
                config,
                reason: "sequence_length must be at least 2".into(),
            });
        } else {
            trials.push(config);
        }
        sample += 1;
    }
    Ok((trials, rejected))
}

/// Trains one model per sampled configuration (in parallel) for
/// `epochs_per_trial` epochs and keeps the best validation token accuracy;
/// ties go to the earliest trial. `base` supplies optimizer settings.
pub fn search(space: &SearchSpace, data: &SearchData, base: &TrainConfig) -> Result<SearchResult, SearchError> {
    let (trials, rejected) = sample_trials(space)?;
    let outcomes: Vec<Result<(f64, f64), TrainError>> = trials
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let cfg = t.model_config(data.src_vocab, data.tgt_vocab);
            let train_set = data.encode(data.train, &cfg);
            let val_set = data.encode(data.val, &cfg);
            let tc = TrainConfig {
                epochs: space.epochs_per_trial,
                batch_size: t.batch_size,
                seed: stage_seed(space.seed, &format!("trial-{i}")),
                refresh_every: None,
                ..base.clone()
            };
            let (_, history) = train(&train_set, &val_set, &cfg, &tc)?;
            let last = history.epochs.last();
            let acc = last.and_then(|e| e.val_accuracy).unwrap_or(0.0);
            Ok((acc, last.map_or(f64::NAN, |e| e.train_loss)))
        })
        .collect();

    let mut log = rejected;
    let mut best: Option<(usize, f64)> = None;
    for (i, (config, outcome)) in trials.iter().zip(outcomes).enumerate() {
        let entry = match outcome {
            Ok((acc, loss)) => {
                if best.is_none_or(|(_, b)| acc > b) {
                    best = Some((i, acc));
                }
                TrialLogEntry::Trial {
                    trial: i,
                    config: *config,
                    accuracy: Some(acc),
                    final_train_loss: Some(loss),
                    error: None,
                }
            }
            Err(e) => TrialLogEntry::Trial {
                trial: i,
                config: *config,
                accuracy: None,
                final_train_loss: None,
                error: Some(e.to_string()),
            },
        };
        log.push(entry);
    }
    let (best_index, best_accuracy) = best.ok_or(SearchError::AllTrialsFailed(trials.len()))?;
    Ok(SearchResult {
        best_config: trials[best_index],
        best_accuracy,
        trial_log: log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_pairs_are_rejected_and_logged() {
        let space = SearchSpace {
            embed_dim: vec![6],
            num_heads: vec![4, 3],
            trial_budget: 5,
            seed: 1,
            ..Default::default()
        };
        let (trials, rejected) = sample_trials(&space).unwrap();
        assert_eq!(trials.len(), 5);
        assert!(trials.iter().all(|t| t.num_heads == 3));
        assert!(!rejected.is_empty());
        assert!(rejected
            .iter()
            .all(|r| matches!(r, TrialLogEntry::Rejected { config, .. } if config.num_heads == 4)));
    }

    #[test]
    fn impossible_space_errors() {
        let space = SearchSpace {
            embed_dim: vec![5],
            num_heads: vec![2],
            trial_budget: 1,
            ..Default::default()
        };
        assert!(matches!(sample_trials(&space), Err(SearchError::NoValidConfig(_))));
        let empty = SearchSpace {
            batch_size: vec![],
            ..Default::default()
        };
        assert!(matches!(sample_trials(&empty), Err(SearchError::InvalidSpace(_))));
    }

    #[test]
    fn sampling_is_deterministic() {
        let space = SearchSpace {
            seed: 42,
            ..Default::default()
        };
        assert_eq!(sample_trials(&space).unwrap(), sample_trials(&space).unwrap());
    }
}
