use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{loss_and_grads, teacher_forced_logits, ModelError};
use super::optim::{LearningRateSchedule, Optimizer, OptimizerKind};
use super::params::Parameters;
use super::vocab::{build_vocab, Vocabulary, END, PAD, START};
use super::{control_token, ControlPlacement, ModelConfig};
use crate::corpus::AnnotatedRecord;
use crate::label::FormalityLabel;
use crate::lexicon::{parse_annotated, TagError};
use crate::textnorm::{tokenize_surfaces, NormalizationConfig};

/// Untagged source/target text with the register requested for the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPair {
    pub source: String,
    pub target: String,
    pub label: FormalityLabel,
}

impl TextPair {
    pub fn new(source: impl Into<String>, target: impl Into<String>, label: FormalityLabel) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
            label,
        }
    }
}

/// Encoded training example. Sequences may carry trailing padding beyond
/// `src_len` / `tgt_len`; masks are derived from the lengths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub src: Vec<usize>,
    pub src_len: usize,
    pub tgt_in: Vec<usize>,
    pub tgt_out: Vec<usize>,
    pub tgt_len: usize,
}

impl Example {
    /// Target positions contributing to the loss.
    pub fn scored_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.tgt_len).filter(|&t| self.tgt_out[t] != PAD)
    }

    /// Pads both sides with `<pad>` up to `seq_len`.
    pub fn padded(&self, seq_len: usize) -> Self {
        let pad = |v: &[usize]| {
            let mut v = v.to_vec();
            v.resize(seq_len.max(v.len()), PAD);
            v
        };
        Self {
            src: pad(&self.src),
            src_len: self.src_len,
            tgt_in: pad(&self.tgt_in),
            tgt_out: pad(&self.tgt_out),
            tgt_len: self.tgt_len,
        }
    }
}

/// Strips the tags from each annotated target, keeping the sentence label.
pub fn pairs_from_annotated(records: &[AnnotatedRecord]) -> Result<Vec<TextPair>, TagError> {
    records
        .iter()
        .map(|r| {
            Ok(TextPair::new(
                &r.source_text,
                parse_annotated(&r.target_tagged)?.plain_text,
                r.label,
            ))
        })
        .collect()
}

/// Source and target vocabularies over the normalized tokens of `pairs`.
pub fn build_vocabularies(pairs: &[TextPair], norm: &NormalizationConfig, min_freq: usize) -> (Vocabulary, Vocabulary) {
    let src = build_vocab(pairs.iter().map(|p| tokenize_surfaces(&p.source, norm)), min_freq);
    let tgt = build_vocab(pairs.iter().map(|p| tokenize_surfaces(&p.target, norm)), min_freq);
    (src, tgt)
}

/// Source ids for `text`, with the control token for `label` placed per
/// `cfg` and the total length capped at `seq_len`.
pub fn encode_source(
    text: &str,
    label: FormalityLabel,
    vocab: &Vocabulary,
    cfg: &ModelConfig,
    norm: &NormalizationConfig,
) -> Vec<usize> {
    let tokens = tokenize_surfaces(text, norm);
    let room = if cfg.control { cfg.seq_len - 1 } else { cfg.seq_len };
    let mut ids: Vec<usize> = tokens.iter().take(room).map(|t| vocab.id(t)).collect();
    if cfg.control {
        match cfg.control_placement {
            ControlPlacement::Prepend => ids.insert(0, control_token(label)),
            ControlPlacement::Append => ids.push(control_token(label)),
        }
    }
    ids
}

pub fn encode_pair(
    pair: &TextPair,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    cfg: &ModelConfig,
    norm: &NormalizationConfig,
) -> Example {
    let src = encode_source(&pair.source, pair.label, src_vocab, cfg, norm);
    let tokens: Vec<usize> = tokenize_surfaces(&pair.target, norm)
        .iter()
        .take(cfg.seq_len - 1)
        .map(|t| tgt_vocab.id(t))
        .collect();
    let mut tgt_in = Vec::with_capacity(tokens.len() + 1);
    tgt_in.push(START);
    tgt_in.extend(&tokens);
    let mut tgt_out = tokens;
    tgt_out.push(END);
    Example {
        src_len: src.len(),
        src,
        tgt_len: tgt_in.len(),
        tgt_in,
        tgt_out,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Defaults to 1e-3 for RMSprop and 1e-4 for Adam.
    pub learning_rate: Option<f64>,
    /// Share of all optimizer steps spent warming up (Adam only).
    pub warmup_fraction: f64,
    pub seed: u64,
    /// Calls the refresh callback after every this many epochs.
    pub refresh_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            optimizer: OptimizerKind::Rmsprop,
            learning_rate: None,
            warmup_fraction: 0.1,
            seed: 0,
            refresh_every: None,
        }
    }
}

impl TrainConfig {
    pub fn lr(&self) -> f64 {
        self.learning_rate.unwrap_or(match self.optimizer {
            OptimizerKind::Rmsprop => 1e-3,
            OptimizerKind::Adam => 1e-4,
        })
    }

    fn schedule(&self, steps_per_epoch: usize) -> LearningRateSchedule {
        match self.optimizer {
            OptimizerKind::Rmsprop => LearningRateSchedule::Constant,
            OptimizerKind::Adam => {
                let total_steps = steps_per_epoch * self.epochs;
                LearningRateSchedule::LinearWarmup {
                    warmup_steps: (total_steps as f64 * self.warmup_fraction).round() as usize,
                    total_steps,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("epoch,train_loss,val_loss,val_accuracy,learning_rate\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch,
                e.train_loss,
                opt(e.val_loss),
                opt(e.val_accuracy),
                e.learning_rate
            ));
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("batch_size must be at least 1")]
    ZeroBatch,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        last_good: Box<Parameters>,
        history: History,
    },
}

/// Teacher-forced token accuracy and mean cross-entropy over all scored
/// target positions.
pub fn token_accuracy(examples: &[Example], params: &Parameters, cfg: &ModelConfig) -> Result<(f64, f64), ModelError> {
    let per: Vec<(usize, usize, f64)> = examples
        .par_iter()
        .map(|e| {
            let logits = teacher_forced_logits(e, params, cfg)?;
            let mut correct = 0;
            let mut count = 0;
            let mut loss = 0.0;
            for t in e.scored_positions() {
                let row = logits.row(t);
                let best = argmax(row.iter().copied());
                correct += usize::from(best == e.tgt_out[t]);
                count += 1;
                loss -= super::network::log_softmax(row)[e.tgt_out[t]];
            }
            Ok((correct, count, loss))
        })
        .collect::<Result<_, ModelError>>()?;
    let (correct, count, loss) = per
        .into_iter()
        .fold((0, 0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    if count == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((correct as f64 / count as f64, loss / count as f64))
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub fn train(
    train_set: &[Example],
    val_set: &[Example],
    cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(Parameters, History), TrainError> {
    train_with_refresh(None, train_set, val_set, cfg, train_cfg, |_| None)
}

/// Trains from `initial` (or a fresh seeded init). Every
/// `train_cfg.refresh_every` epochs `refresh` is called with the number of
/// completed epochs and may return a replacement training set.
pub fn train_with_refresh<F>(
    initial: Option<Parameters>,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    mut refresh: F,
) -> Result<(Parameters, History), TrainError>
where
    F: FnMut(usize) -> Option<Vec<Example>>,
{
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    if train_cfg.batch_size == 0 {
        return Err(TrainError::ZeroBatch);
    }
    let mut params = match initial {
        Some(p) if p.matches_config(cfg) => p,
        Some(_) => return Err(ModelError::ShapeMismatch("initial parameters do not match config".into()).into()),
        None => Parameters::init(cfg, train_cfg.seed),
    };
    let steps_per_epoch = train_set.len().div_ceil(train_cfg.batch_size);
    let mut opt = Optimizer::new(
        train_cfg.optimizer,
        train_cfg.lr(),
        train_cfg.schedule(steps_per_epoch),
        &params,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed ^ 0x5eed_5eed);
    let mut data: Vec<Example> = train_set.to_vec();
    let mut history = History::default();

    for epoch in 1..=train_cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let lr = opt.current_lr();
        let mut loss_sum = 0.0;
        let mut token_sum = 0usize;
        for chunk in order.chunks(train_cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| data[i].clone()).collect();
            let tokens: usize = batch.iter().map(|e| e.scored_positions().count()).sum();
            let diverged = |reason: String, params: &Parameters, history: &History| TrainError::Diverged {
                epoch,
                reason,
                last_good: Box::new(params.clone()),
                history: history.clone(),
            };
            let (loss, grads) = match loss_and_grads(&batch, &params, cfg) {
                Ok(v) => v,
                Err(ModelError::NonFinite(reason)) => return Err(diverged(reason, &params, &history)),
                Err(e) => return Err(e.into()),
            };
            if !grads.is_finite() {
                return Err(diverged("non-finite gradient".into(), &params, &history));
            }
            let before = params.clone();
            opt.step(&mut params, &grads);
            if !params.is_finite() {
                return Err(diverged("non-finite parameters after update".into(), &before, &history));
            }
            loss_sum += loss * tokens as f64;
            token_sum += tokens;
        }
        let train_loss = if token_sum == 0 {
            0.0
        } else {
            loss_sum / token_sum as f64
        };
        let (val_accuracy, val_loss) = if val_set.is_empty() {
            (None, None)
        } else {
            let (acc, loss) = token_accuracy(val_set, &params, cfg)?;
            (Some(acc), Some(loss))
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
            learning_rate: lr,
        });
        if let Some(every) = train_cfg.refresh_every.filter(|&n| n > 0) {
            if epoch % every == 0 && epoch < train_cfg.epochs {
                if let Some(fresh) = refresh(epoch).filter(|f| !f.is_empty()) {
                    data = fresh;
                }
            }
        }
    }
    Ok((params, history))
}
