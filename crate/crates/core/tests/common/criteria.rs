use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use fsmt_core::annotator::{annotate_corpus, DistributionReport};
use fsmt_core::corpus::{split, SplitConfig};
use fsmt_core::label::FormalityLabel;
use fsmt_core::lexicon::parse_annotated;
use fsmt_core::metric::{matched_accuracy, EvalEntry, MatchMode, MetricResult};
use fsmt_core::mlm::{mask_with_stream, MaskConfig};
use fsmt_core::model::{
    build_vocab, decode, encode_pair, load_checkpoint, read_checkpoint, save_checkpoint, train, Checkpoint,
    DecodeConfig, ModelConfig, OptimizerKind, TrainConfig,
};
use fsmt_core::synth;
use fsmt_core::textnorm::{normalize, tokenize_surfaces, NormalizationConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------- metric

const WORDS: [&str; 5] = ["aap", "tum", "hai", "ho", "kal"];

fn random_phrase(rng: &mut ChaCha8Rng) -> String {
    (0..rng.gen_range(1..=2))
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// A reference with up to three tagged phrases separated by filler words.
fn random_reference(rng: &mut ChaCha8Rng, label: FormalityLabel) -> String {
    let (open, close) = label.tags().unwrap();
    let mut parts = Vec::new();
    for _ in 0..rng.gen_range(0..=3) {
        if rng.gen_bool(0.5) {
            parts.push("bhi".to_string());
        }
        parts.push(format!("{open}{}{close}", random_phrase(rng)));
    }
    parts.push("x".into());
    parts.join(" ")
}

pub fn random_eval_set(rng: &mut ChaCha8Rng) -> Vec<EvalEntry> {
    (0..rng.gen_range(1..=8))
        .map(|_| {
            let hypothesis = (0..rng.gen_range(0..=6))
                .map(|_| *WORDS.choose(rng).unwrap())
                .collect::<Vec<_>>()
                .join(" ");
            EvalEntry {
                hypothesis,
                formal_ref: parse_annotated(&random_reference(rng, FormalityLabel::Formal)).unwrap(),
                informal_ref: parse_annotated(&random_reference(rng, FormalityLabel::Informal)).unwrap(),
            }
        })
        .collect()
}

/// Phrases between `open` and `close` markers, found by plain string search.
fn oracle_phrases(tagged: &str, open: &str, close: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut rest = tagged;
    while let Some(start) = rest.find(open) {
        let after = &rest[start + open.len()..];
        let end = after.find(close).expect("closed tag");
        let phrase = after[..end].trim();
        if !phrase.is_empty() {
            out.insert(phrase.to_string());
        }
        rest = &after[end + close.len()..];
    }
    out
}

fn oracle_has(hypothesis: &str, phrases: &BTreeSet<String>, all: bool) -> bool {
    if phrases.is_empty() {
        return false;
    }
    let padded = format!(" {hypothesis} ");
    let hit = |p: &String| padded.contains(&format!(" {p} "));
    if all {
        phrases.iter().all(hit)
    } else {
        phrases.iter().any(hit)
    }
}

/// Brute-force matched accuracy written without the library's helpers.
pub fn oracle_accuracy(set: &[EvalEntry], all: bool) -> MetricResult {
    let mut match_f = 0;
    let mut match_i = 0;
    for e in set {
        let f = oracle_has(
            &e.hypothesis,
            &oracle_phrases(&e.formal_ref.to_tagged(), "[F]", "[/F]"),
            all,
        );
        let i = oracle_has(
            &e.hypothesis,
            &oracle_phrases(&e.informal_ref.to_tagged(), "[I]", "[/I]"),
            all,
        );
        if f && !i {
            match_f += 1;
        }
        if i && !f {
            match_i += 1;
        }
    }
    let denom = match_f + match_i;
    MetricResult {
        match_f,
        match_i,
        acc_f: if denom == 0 {
            None
        } else {
            Some(match_f as f64 / denom as f64)
        },
        acc_i: if denom == 0 {
            None
        } else {
            Some(match_i as f64 / denom as f64)
        },
        neutral_or_mixed: set.len() - denom,
        n: set.len(),
    }
}

pub struct MetricOracleOutcome {
    pub cases: usize,
    pub mismatches: usize,
    pub property_violations: usize,
    pub elapsed: Duration,
}

/// Compares the library to the oracle on `cases` random sets in both modes
/// and checks the bound and swap-symmetry properties.
pub fn metric_oracle(cases: usize, seed: u64) -> MetricOracleOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    let mut violations = 0;
    for _ in 0..cases {
        let set = random_eval_set(&mut rng);
        for (mode, all) in [(MatchMode::All, true), (MatchMode::Any, false)] {
            let got = matched_accuracy(&set, mode).unwrap();
            if got != oracle_accuracy(&set, all) {
                mismatches += 1;
            }
            if got.match_f + got.match_i > set.len() {
                violations += 1;
            }
            let swapped: Vec<EvalEntry> = set
                .iter()
                .map(|e| EvalEntry {
                    hypothesis: e.hypothesis.clone(),
                    formal_ref: e.informal_ref.clone(),
                    informal_ref: e.formal_ref.clone(),
                })
                .collect();
            let s = matched_accuracy(&swapped, mode).unwrap();
            if (s.match_f, s.match_i, s.acc_f, s.acc_i) != (got.match_i, got.match_f, got.acc_i, got.acc_f) {
                violations += 1;
            }
        }
    }
    MetricOracleOutcome {
        cases,
        mismatches,
        property_violations: violations,
        elapsed: start.elapsed(),
    }
}

// ---------------------------------------------------------------- overfit

pub struct OverfitOutcome {
    pub pairs: usize,
    pub epochs: usize,
    pub final_loss: f64,
    /// Epochs `t` with `loss[t + 10] >= loss[t]`.
    pub window_violations: Vec<usize>,
    pub elapsed: Duration,
}

pub fn overfit(epochs: usize) -> OverfitOutcome {
    let start = Instant::now();
    let items = synth::sample(26, 6, 11);
    let pairs = synth::single_register_pairs(&items, 11);
    let norm = NormalizationConfig::default();
    let sv = build_vocab(pairs.iter().map(|p| tokenize_surfaces(&p.source, &norm)), 1);
    let tv = build_vocab(pairs.iter().map(|p| tokenize_surfaces(&p.target, &norm)), 1);
    let cfg = ModelConfig::new(32, 64, 4, 8).with_vocab_sizes(sv.len(), tv.len());
    let examples: Vec<_> = pairs.iter().map(|p| encode_pair(p, &sv, &tv, &cfg, &norm)).collect();
    let tc = TrainConfig {
        epochs,
        batch_size: 8,
        optimizer: OptimizerKind::Adam,
        learning_rate: Some(3e-3),
        seed: 3,
        ..Default::default()
    };
    let (_, history) = train(&examples, &[], &cfg, &tc).unwrap();
    let losses = history.train_losses();
    OverfitOutcome {
        pairs: examples.len(),
        epochs: losses.len(),
        final_loss: *losses.last().unwrap(),
        window_violations: (0..losses.len().saturating_sub(10))
            .filter(|&t| losses[t + 10] >= losses[t])
            .collect(),
        elapsed: start.elapsed(),
    }
}

// ---------------------------------------------------------------- masking

pub struct MaskingOutcome {
    pub eligible: usize,
    pub masked: usize,
    pub outside_tags: usize,
    pub tag_mismatches: usize,
    pub elapsed: Duration,
}

impl MaskingOutcome {
    pub fn rate(&self) -> f64 {
        self.masked as f64 / self.eligible as f64
    }
}

/// Whether every occurrence of `mask_token` in `tagged` sits inside a tag pair.
fn masks_inside_tags(tagged: &str, mask_token: &str) -> bool {
    let mut inside = false;
    let mut i = 0;
    while i < tagged.len() {
        let rest = &tagged[i..];
        if rest.starts_with("[F]") || rest.starts_with("[I]") {
            inside = true;
            i += 3;
        } else if rest.starts_with("[/F]") || rest.starts_with("[/I]") {
            inside = false;
            i += 4;
        } else if rest.starts_with(mask_token) {
            if !inside {
                return false;
            }
            i += mask_token.len();
        } else {
            i += rest.chars().next().unwrap().len_utf8();
        }
    }
    true
}

pub fn masking_stats(min_eligible: usize, seed: u64) -> MaskingOutcome {
    let start = Instant::now();
    let cfg = MaskConfig {
        seed,
        guarantee_one: false,
        ..Default::default()
    };
    let pool = synth::all_second_person();
    let mut out = MaskingOutcome {
        eligible: 0,
        masked: 0,
        outside_tags: 0,
        tag_mismatches: 0,
        elapsed: Duration::ZERO,
    };
    let mut stream = 0u64;
    'outer: loop {
        for s in &pool {
            for tagged in [s.formal_tagged.as_str(), s.informal_tagged.as_str()] {
                let eligible: usize = parse_annotated(tagged)
                    .unwrap()
                    .spans
                    .iter()
                    .map(|sp| sp.phrase.split_whitespace().count())
                    .sum();
                let m = mask_with_stream(tagged, &cfg, stream).unwrap();
                stream += 1;
                out.eligible += eligible;
                out.masked += m.masked_positions.len();
                if !masks_inside_tags(&m.masked_tagged, &cfg.mask_token) {
                    out.outside_tags += 1;
                }
                let mut restored = m.masked_tagged.clone();
                for truth in &m.ground_truth_tokens {
                    restored = restored.replacen(&cfg.mask_token, truth, 1);
                }
                if restored != tagged {
                    out.tag_mismatches += 1;
                }
                if out.eligible >= min_eligible {
                    break 'outer;
                }
            }
        }
    }
    out.elapsed = start.elapsed();
    out
}

// ---------------------------------------------------------------- annotator

pub struct AnnotatorOutcome {
    pub report: DistributionReport,
    pub label_mismatches: usize,
    pub roundtrip_failures: usize,
    pub elapsed: Duration,
}

pub fn annotator_exactness(formal: usize, informal: usize, neutral: usize, seed: u64) -> AnnotatorOutcome {
    let start = Instant::now();
    let corpus = synth::labeled_parallel(formal, informal, neutral, seed);
    let lexicon = synth::lexicon();
    let norm = NormalizationConfig::default();
    let (results, report) = annotate_corpus(corpus.iter().map(|(p, _, _)| Ok(p.clone())), &lexicon, &norm).unwrap();
    let mut label_mismatches = 0;
    let mut roundtrip_failures = 0;
    for (r, (pair, label, tagged)) in results.iter().zip(&corpus) {
        if r.label != *label || r.pair_id != pair.id {
            label_mismatches += 1;
        }
        let stripped = parse_annotated(&r.target_tagged).unwrap().plain_text;
        if stripped != normalize(&pair.target_text, &norm) || &r.target_tagged != tagged {
            roundtrip_failures += 1;
        }
    }
    AnnotatorOutcome {
        report,
        label_mismatches,
        roundtrip_failures,
        elapsed: start.elapsed(),
    }
}

// ---------------------------------------------------------------- checkpoint

pub struct CheckpointOutcome {
    pub inputs: usize,
    pub decode_mismatches: usize,
    pub bytes_identical: bool,
}

/// A small controlled model trained on the synthetic language.
pub fn small_model(seed: u64, epochs: usize) -> Checkpoint {
    let items = synth::sample(120, 30, seed);
    let pairs = synth::single_register_pairs(&items, seed);
    let norm = NormalizationConfig::default();
    let src_vocab = build_vocab(pairs.iter().map(|p| tokenize_surfaces(&p.source, &norm)), 1);
    let tgt_vocab = build_vocab(pairs.iter().map(|p| tokenize_surfaces(&p.target, &norm)), 1);
    let config = ModelConfig::new(16, 32, 2, 8).with_vocab_sizes(src_vocab.len(), tgt_vocab.len());
    let examples: Vec<_> = pairs
        .iter()
        .map(|p| encode_pair(p, &src_vocab, &tgt_vocab, &config, &norm))
        .collect();
    let tc = TrainConfig {
        epochs,
        batch_size: 16,
        optimizer: OptimizerKind::Adam,
        learning_rate: Some(3e-3),
        seed,
        ..Default::default()
    };
    let (params, _) = train(&examples, &[], &config, &tc).unwrap();
    Checkpoint {
        config,
        params,
        src_vocab,
        tgt_vocab,
        norm,
    }
}

pub fn checkpoint_roundtrip(model: &Checkpoint, dir: &std::path::Path) -> CheckpointOutcome {
    let inputs: Vec<(String, FormalityLabel)> = synth::sample(40, 10, 99)
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s.source, FormalityLabel::ALL[i % 3]))
        .collect();
    let beams = DecodeConfig {
        num_beams: 3,
        ..Default::default()
    };
    let run = |m: &Checkpoint| -> Vec<(Vec<usize>, String, u64)> {
        inputs
            .iter()
            .enumerate()
            .map(|(i, (text, label))| {
                let dcfg = if i % 2 == 0 { DecodeConfig::default() } else { beams };
                let h = decode(m, text, *label, &dcfg).unwrap();
                (h.ids, h.text, h.score.to_bits())
            })
            .collect()
    };
    let before = run(model);
    let first = dir.join("first.fmt");
    let second = dir.join("second.fmt");
    save_checkpoint(model, &first).unwrap();
    let loaded = load_checkpoint(&first).unwrap();
    let after = run(&loaded);
    save_checkpoint(&loaded, &second).unwrap();
    let a = std::fs::read(&first).unwrap();
    let b = std::fs::read(&second).unwrap();
    CheckpointOutcome {
        inputs: inputs.len(),
        decode_mismatches: before.iter().zip(&after).filter(|(x, y)| x != y).count(),
        bytes_identical: a == b && read_checkpoint(&b).unwrap() == *model,
    }
}

// ---------------------------------------------------------------- split

pub struct SplitOutcome {
    pub corpora: usize,
    pub failures: Vec<String>,
}

pub fn split_determinism(corpora: usize, seed: u64) -> SplitOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for c in 0..corpora {
        let n = rng.gen_range(1..500);
        let items: Vec<u32> = (0..n).collect();
        let cfg = SplitConfig {
            seed: rng.gen(),
            ..Default::default()
        };
        let (train, val) = split(&items, &cfg).unwrap();
        let expected_val = (0.2 * n as f64).round() as usize;
        if val.len() != expected_val || train.len() != n as usize - expected_val {
            failures.push(format!("corpus {c}: sizes {}/{} for n={n}", train.len(), val.len()));
        }
        if split(&items, &cfg).unwrap() != (train.clone(), val.clone()) {
            failures.push(format!("corpus {c}: not deterministic"));
        }
        let mut all: Vec<u32> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        if all != items || !train.windows(2).all(|w| w[0] < w[1]) || !val.windows(2).all(|w| w[0] < w[1]) {
            failures.push(format!("corpus {c}: not an order-preserving partition"));
        }
    }
    SplitOutcome { corpora, failures }
}
