use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::network::{
    decoder_forward, default_control_positions, encoder_forward, log_softmax, EncoderOutput, ModelError,
};
use super::params::Parameters;
use super::train::{argmax, encode_source};
use super::vocab::{Vocabulary, END, START};
use super::ModelConfig;
use crate::label::FormalityLabel;
use crate::textnorm::detokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// Maximum generated tokens including `<end>`; also capped by `seq_len`.
    pub max_length: usize,
    pub num_beams: usize,
    pub early_stopping: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            max_length: 100,
            num_beams: 1,
            early_stopping: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite logits at step {step}")]
    NonFinite { step: usize },
    #[error("source encodes to an empty sequence")]
    EmptySource,
    #[error("num_beams and max_length must be at least 1")]
    InvalidConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Generated ids, without `<start>` and `<end>`.
    pub ids: Vec<usize>,
    pub text: String,
    /// Sum of token log-probabilities divided by the number of generated
    /// tokens, `<end>` included.
    pub score: f64,
}

struct Scorer<'a> {
    enc: EncoderOutput,
    control: Vec<usize>,
    params: &'a Parameters,
    cfg: &'a ModelConfig,
}

impl Scorer<'_> {
    /// Log-probabilities of the next token after `prefix` (`<start>` excluded).
    fn next(&self, prefix: &[usize], step: usize) -> Result<Vec<f64>, DecodeError> {
        let mut input = Vec::with_capacity(prefix.len() + 1);
        input.push(START);
        input.extend_from_slice(prefix);
        let out = decoder_forward(&input, input.len(), &self.enc, &self.control, self.params, self.cfg)?;
        let last = out.logits.row(input.len() - 1);
        if last.iter().any(|v| !v.is_finite()) {
            return Err(DecodeError::NonFinite { step });
        }
        Ok(log_softmax(last))
    }
}

#[derive(Clone)]
struct Beam {
    ids: Vec<usize>,
    logp: f64,
}

fn normalized(logp: f64, generated: usize) -> f64 {
    logp / generated.max(1) as f64
}

fn greedy(scorer: &Scorer, limit: usize) -> Result<(Vec<usize>, f64), DecodeError> {
    let mut ids = Vec::new();
    let mut logp = 0.0;
    for step in 0..limit {
        let lp = scorer.next(&ids, step)?;
        let best = argmax(lp.iter().copied());
        logp += lp[best];
        if best == END {
            return Ok((ids, normalized(logp, step + 1)));
        }
        ids.push(best);
    }
    let n = ids.len();
    Ok((ids, normalized(logp, n)))
}

fn beam_search(
    scorer: &Scorer,
    limit: usize,
    num_beams: usize,
    early_stopping: bool,
) -> Result<Vec<(Vec<usize>, f64)>, DecodeError> {
    let mut active = vec![Beam {
        ids: Vec::new(),
        logp: 0.0,
    }];
    let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
    for step in 0..limit {
        let mut candidates: Vec<(Beam, bool)> = Vec::new();
        for beam in &active {
            let lp = scorer.next(&beam.ids, step)?;
            let mut order: Vec<usize> = (0..lp.len()).collect();
            order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
            for &tok in order.iter().take(2 * num_beams) {
                let mut ids = beam.ids.clone();
                let done = tok == END;
                if !done {
                    ids.push(tok);
                }
                candidates.push((
                    Beam {
                        ids,
                        logp: beam.logp + lp[tok],
                    },
                    done,
                ));
            }
        }
        candidates.sort_by(|a, b| b.0.logp.total_cmp(&a.0.logp));
        active.clear();
        for (beam, done) in candidates {
            if done {
                finished.push((beam.ids, normalized(beam.logp, step + 1)));
            } else if active.len() < num_beams {
                active.push(beam);
            }
            if active.len() == num_beams {
                break;
            }
        }
        if active.is_empty() || (early_stopping && finished.len() >= num_beams) {
            return Ok(finished);
        }
    }
    finished.extend(active.into_iter().map(|b| {
        let n = b.ids.len();
        (b.ids, normalized(b.logp, n))
    }));
    Ok(finished)
}

/// Decodes from already-encoded source ids. Returns generated ids and the
/// length-normalized score of the best hypothesis.
pub fn decode_ids(
    src: &[usize],
    params: &Parameters,
    cfg: &ModelConfig,
    dcfg: &DecodeConfig,
) -> Result<(Vec<usize>, f64), DecodeError> {
    if dcfg.num_beams == 0 || dcfg.max_length == 0 {
        return Err(DecodeError::InvalidConfig);
    }
    if src.is_empty() {
        return Err(DecodeError::EmptySource);
    }
    let enc = encoder_forward(src, src.len(), params, cfg)?;
    let scorer = Scorer {
        control: default_control_positions(cfg, src.len()),
        enc,
        params,
        cfg,
    };
    let limit = dcfg.max_length.min(cfg.seq_len);
    let best = greedy(&scorer, limit)?;
    if dcfg.num_beams == 1 {
        return Ok(best);
    }
    let mut best = best;
    for (ids, score) in beam_search(&scorer, limit, dcfg.num_beams, dcfg.early_stopping)? {
        if score > best.1 {
            best = (ids, score);
        }
    }
    Ok(best)
}

pub(crate) fn ids_to_text(ids: &[usize], vocab: &Vocabulary) -> String {
    let tokens: Vec<&str> = ids
        .iter()
        .filter(|&&id| !Vocabulary::is_reserved(id))
        .filter_map(|&id| vocab.token(id))
        .collect();
    detokenize(&tokens)
}

/// Translates `text` into the requested register.
pub fn decode(
    model: &Checkpoint,
    text: &str,
    formality: FormalityLabel,
    dcfg: &DecodeConfig,
) -> Result<Hypothesis, DecodeError> {
    let src = encode_source(text, formality, &model.src_vocab, &model.config, &model.norm);
    let (ids, score) = decode_ids(&src, &model.params, &model.config, dcfg)?;
    Ok(Hypothesis {
        text: ids_to_text(&ids, &model.tgt_vocab),
        ids,
        score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FORMAL, RESERVED};

    fn tiny() -> (ModelConfig, Parameters) {
        let cfg = ModelConfig::new(4, 8, 2, 6).with_vocab_sizes(10, 10);
        let p = Parameters::init(&cfg, 5);
        (cfg, p)
    }

    #[test]
    fn forced_end_gives_empty_hypothesis() {
        let (cfg, mut p) = tiny();
        p.out_w.fill(0.0);
        p.out_b[[0, END]] = 50.0;
        for beams in [1, 3] {
            let dcfg = DecodeConfig {
                num_beams: beams,
                ..Default::default()
            };
            let (ids, score) = decode_ids(&[FORMAL, 7], &p, &cfg, &dcfg).unwrap();
            assert!(ids.is_empty());
            assert!(score > -1e-9);
        }
    }

    #[test]
    fn nan_logits_are_rejected() {
        let (cfg, mut p) = tiny();
        p.out_b[[0, 8]] = f64::NAN;
        let err = decode_ids(&[FORMAL, 7], &p, &cfg, &DecodeConfig::default()).unwrap_err();
        assert_eq!(err, DecodeError::NonFinite { step: 0 });
    }

    #[test]
    fn length_capped_by_seq_len() {
        let (cfg, mut p) = tiny();
        p.out_w.fill(0.0);
        p.out_b[[0, 9]] = 50.0;
        let (ids, _) = decode_ids(&[FORMAL], &p, &cfg, &DecodeConfig::default()).unwrap();
        assert_eq!(ids.len(), cfg.seq_len);
        let short = DecodeConfig {
            max_length: 2,
            ..Default::default()
        };
        assert_eq!(decode_ids(&[FORMAL], &p, &cfg, &short).unwrap().0.len(), 2);
    }

    #[test]
    fn beam_never_worse_than_greedy() {
        let (cfg, p) = tiny();
        for seed in 0..5 {
            let p = if seed == 0 {
                p.clone()
            } else {
                Parameters::init(&cfg, seed)
            };
            let src = [FORMAL, 7, 8];
            let g = decode_ids(&src, &p, &cfg, &DecodeConfig::default()).unwrap();
            let b = decode_ids(
                &src,
                &p,
                &cfg,
                &DecodeConfig {
                    num_beams: 2,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(b.1 >= g.1);
        }
    }

    #[test]
    fn reserved_ids_are_not_rendered() {
        let vocab = Vocabulary::from_tokens(["a", "b"]).unwrap();
        let n = RESERVED.len();
        assert_eq!(ids_to_text(&[n, 1, n + 1, 4], &vocab), "a b");
    }
}
