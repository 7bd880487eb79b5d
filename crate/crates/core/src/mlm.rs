//! In-tag masking and masked-token evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotator::classify;
use crate::lexicon::{parse_annotated, TagError};
use crate::model::{
    control_token, encode_source, teacher_forced_logits, Checkpoint, Example, ModelError, Vocabulary, END, START, UNK,
};
use crate::textnorm::{normalize, split_tokens, tokenize_surfaces, NormalizationConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskConfig {
    pub mask_probability: f64,
    pub seed: u64,
    pub mask_token: String,
    pub guarantee_one: bool,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            mask_probability: 0.15,
            seed: 0,
            mask_token: "<mask>".into(),
            guarantee_one: true,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<(), MlmError> {
        if !(self.mask_probability > 0.0 && self.mask_probability < 1.0) {
            return Err(MlmError::InvalidConfig(format!(
                "mask_probability {} must lie strictly between 0 and 1",
                self.mask_probability
            )));
        }
        if self.mask_token.is_empty() || self.mask_token.chars().any(char::is_whitespace) {
            return Err(MlmError::InvalidConfig(
                "mask_token must be a single non-empty token".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedSentence {
    pub original_tagged: String,
    pub masked_tagged: String,
    /// Indices into the whitespace tokens of the untagged sentence.
    pub masked_positions: Vec<usize>,
    pub ground_truth_tokens: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum MlmError {
    #[error(transparent)]
    Tag(#[from] TagError),
    #[error("invalid mask config: {0}")]
    InvalidConfig(String),
    #[error("alignment mismatch: {0}")]
    AlignmentMismatch(String),
    #[error("distribution for masked token {index} sums to {sum}")]
    NotNormalized { index: usize, sum: f64 },
    #[error("masked target needs {len} decoder positions but seq_len is {seq_len}")]
    LengthOverflow { len: usize, seq_len: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Masks in-tag tokens of `sentence_tagged` using an RNG seeded from `cfg.seed`.
pub fn mask(sentence_tagged: &str, cfg: &MaskConfig) -> Result<MaskedSentence, MlmError> {
    mask_with_stream(sentence_tagged, cfg, 0)
}

/// Like [`mask`] but draws from stream `stream` of the seeded generator, so
/// each sentence of a corpus gets an independent, reproducible sequence.
pub fn mask_with_stream(sentence_tagged: &str, cfg: &MaskConfig, stream: u64) -> Result<MaskedSentence, MlmError> {
    cfg.validate()?;
    let sentence = parse_annotated(sentence_tagged)?;
    let tokens = split_tokens(&sentence.plain_text);
    // (token index, span index)
    let eligible: Vec<(usize, usize)> = tokens
        .iter()
        .enumerate()
        .filter_map(|(i, t)| {
            sentence
                .spans
                .iter()
                .position(|s| s.span.start <= t.byte_span.start && t.byte_span.end <= s.span.end)
                .map(|k| (i, k))
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let mut chosen: Vec<(usize, usize)> = eligible
        .iter()
        .copied()
        .filter(|_| rng.gen_bool(cfg.mask_probability))
        .collect();
    if chosen.is_empty() && cfg.guarantee_one && !eligible.is_empty() {
        chosen.push(eligible[rng.gen_range(0..eligible.len())]);
    }

    let mut masked_tagged = String::with_capacity(sentence_tagged.len());
    let mut cursor = 0;
    for &(i, k) in &chosen {
        let span = &tokens[i].byte_span;
        let start = sentence.tagged_offset_in_span(span.start, k);
        let end = sentence.tagged_offset_in_span(span.end, k);
        masked_tagged.push_str(&sentence_tagged[cursor..start]);
        masked_tagged.push_str(&cfg.mask_token);
        cursor = end;
    }
    masked_tagged.push_str(&sentence_tagged[cursor..]);

    Ok(MaskedSentence {
        original_tagged: sentence_tagged.to_string(),
        masked_tagged,
        masked_positions: chosen.iter().map(|&(i, _)| i).collect(),
        ground_truth_tokens: chosen.iter().map(|&(i, _)| tokens[i].surface.clone()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskedAccuracy {
    /// Absent when there were no masked tokens at all.
    pub acc: Option<f64>,
    pub correct: usize,
    pub total: usize,
}

fn same_surface(a: &str, b: &str) -> bool {
    let cfg = NormalizationConfig::default();
    normalize(a, &cfg) == normalize(b, &cfg)
}

pub fn masked_accuracy(predictions: &[Vec<String>], masked: &[MaskedSentence]) -> Result<MaskedAccuracy, MlmError> {
    if predictions.len() != masked.len() {
        return Err(MlmError::AlignmentMismatch(format!(
            "{} prediction lists for {} sentences",
            predictions.len(),
            masked.len()
        )));
    }
    let mut correct = 0;
    let mut total = 0;
    for (i, (pred, m)) in predictions.iter().zip(masked).enumerate() {
        if pred.len() != m.ground_truth_tokens.len() {
            return Err(MlmError::AlignmentMismatch(format!(
                "sentence {i}: {} predictions for {} masked tokens",
                pred.len(),
                m.ground_truth_tokens.len()
            )));
        }
        correct += pred
            .iter()
            .zip(&m.ground_truth_tokens)
            .filter(|(p, t)| same_surface(p, t))
            .count();
        total += pred.len();
    }
    Ok(MaskedAccuracy {
        acc: (total > 0).then(|| correct as f64 / total as f64),
        correct,
        total,
    })
}

/// Mean negative log-probability of the ground-truth tokens. Each sentence
/// supplies one distribution over `vocab` per masked position; tokens outside
/// the vocabulary are scored as `<unk>`. Returns `None` with no masked tokens.
pub fn masked_cross_entropy(
    distributions: &[Vec<Vec<f64>>],
    masked: &[MaskedSentence],
    vocab: &Vocabulary,
    norm: &NormalizationConfig,
) -> Result<Option<f64>, MlmError> {
    if distributions.len() != masked.len() {
        return Err(MlmError::AlignmentMismatch(format!(
            "{} distribution lists for {} sentences",
            distributions.len(),
            masked.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (dists, m) in distributions.iter().zip(masked) {
        if dists.len() != m.ground_truth_tokens.len() {
            return Err(MlmError::AlignmentMismatch(
                "distribution count differs from masked tokens".into(),
            ));
        }
        for (dist, truth) in dists.iter().zip(&m.ground_truth_tokens) {
            if dist.len() != vocab.len() {
                return Err(MlmError::AlignmentMismatch(format!(
                    "distribution over {} entries for vocabulary of {}",
                    dist.len(),
                    vocab.len()
                )));
            }
            let total: f64 = dist.iter().sum();
            if (total - 1.0).abs() > 1e-6 {
                return Err(MlmError::NotNormalized {
                    index: count,
                    sum: total,
                });
            }
            let id = vocab.id(&normalize(truth, norm));
            sum -= dist[id].ln();
            count += 1;
        }
    }
    Ok((count > 0).then(|| sum / count as f64))
}

/// Argmax tokens and full distributions at the masked positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Fill {
    pub predictions: Vec<String>,
    pub distributions: Vec<Vec<f64>>,
}

/// Teacher-forced fill-in: the masked target (mask token as `<unk>`) is fed
/// to the decoder and each masked position takes the logit argmax, ties to
/// the lowest id. The control token follows the sentence's tag majority.
pub fn fill_mask_distributions(
    masked: &MaskedSentence,
    source_text: &str,
    model: &Checkpoint,
) -> Result<Fill, MlmError> {
    let sentence = parse_annotated(&masked.masked_tagged)?;
    let original = parse_annotated(&masked.original_tagged)?;
    let label = classify(&original.spans);
    let tokens = split_tokens(&sentence.plain_text);

    let mut ids = Vec::new();
    let mut read_at = Vec::with_capacity(masked.masked_positions.len());
    for (i, tok) in tokens.iter().enumerate() {
        if masked.masked_positions.contains(&i) {
            read_at.push(ids.len());
            ids.push(UNK);
        } else {
            ids.extend(
                tokenize_surfaces(&tok.surface, &model.norm)
                    .iter()
                    .map(|t| model.tgt_vocab.id(t)),
            );
        }
    }
    if read_at.len() != masked.masked_positions.len() {
        return Err(MlmError::AlignmentMismatch(
            "masked positions exceed sentence tokens".into(),
        ));
    }
    let cfg = &model.config;
    if ids.len() + 1 > cfg.seq_len {
        return Err(MlmError::LengthOverflow {
            len: ids.len() + 1,
            seq_len: cfg.seq_len,
        });
    }
    let src = {
        let mut s = encode_source(source_text, label, &model.src_vocab, cfg, &model.norm);
        if s.is_empty() {
            s.push(control_token(label));
        }
        s
    };
    let mut tgt_in = vec![START];
    tgt_in.extend(&ids);
    let mut tgt_out = ids;
    tgt_out.push(END);
    let example = Example {
        src_len: src.len(),
        src,
        tgt_len: tgt_in.len(),
        tgt_in,
        tgt_out,
    };
    let logits = teacher_forced_logits(&example, &model.params, cfg)?;
    let mut fill = Fill {
        predictions: Vec::with_capacity(read_at.len()),
        distributions: Vec::with_capacity(read_at.len()),
    };
    for &t in &read_at {
        let row = logits.row(t);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        fill.predictions
            .push(model.tgt_vocab.token(best).unwrap_or_default().to_string());
        fill.distributions.push(exp.into_iter().map(|e| e / z).collect());
    }
    Ok(fill)
}

pub fn fill_mask_with_model(
    masked: &MaskedSentence,
    source_text: &str,
    model: &Checkpoint,
) -> Result<Vec<String>, MlmError> {
    Ok(fill_mask_distributions(masked, source_text, model)?.predictions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceDetail {
    pub masked_tagged: String,
    pub ground_truth: Vec<String>,
    pub predictions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedReport {
    pub acc: Option<f64>,
    pub correct: usize,
    pub total: usize,
    pub loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sentences: Option<Vec<SentenceDetail>>,
}

/// Masks every `(source, tagged target)` pair (sentence `i` uses RNG stream
/// `i`), fills with `model` in parallel and aggregates accuracy and loss.
pub fn evaluate_masked(
    pairs: &[(String, String)],
    model: &Checkpoint,
    cfg: &MaskConfig,
    verbose: bool,
) -> Result<MaskedReport, MlmError> {
    let masked: Vec<MaskedSentence> = pairs
        .iter()
        .enumerate()
        .map(|(i, (_, tagged))| mask_with_stream(tagged, cfg, i as u64))
        .collect::<Result<_, _>>()?;
    let fills: Vec<Fill> = pairs
        .par_iter()
        .zip(&masked)
        .map(|((src, _), m)| fill_mask_distributions(m, src, model))
        .collect::<Result<_, _>>()?;
    let predictions: Vec<Vec<String>> = fills.iter().map(|f| f.predictions.clone()).collect();
    let distributions: Vec<Vec<Vec<f64>>> = fills.into_iter().map(|f| f.distributions).collect();
    let acc = masked_accuracy(&predictions, &masked)?;
    let loss = masked_cross_entropy(&distributions, &masked, &model.tgt_vocab, &model.norm)?;
    let sentences = verbose.then(|| {
        masked
            .iter()
            .zip(predictions)
            .map(|(m, p)| SentenceDetail {
                masked_tagged: m.masked_tagged.clone(),
                ground_truth: m.ground_truth_tokens.clone(),
                predictions: p,
            })
            .collect()
    });
    Ok(MaskedReport {
        acc: acc.acc,
        correct: acc.correct,
        total: acc.total,
        loss,
        sentences,
    })
}
