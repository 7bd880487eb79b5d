#![allow(dead_code)]

use fsmt_core::model::{example_loss, loss_and_grads, Example, ModelConfig, Parameters, END, RESERVED, START};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config() -> ModelConfig {
    ModelConfig::new(8, 16, 2, 6).with_vocab_sizes(20, 20)
}

/// Random examples with control token, padding and varying lengths.
pub fn random_examples(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = RESERVED.len();
    (0..n)
        .map(|_| {
            let src_len = rng.gen_range(2..=cfg.seq_len);
            let mut src: Vec<usize> = vec![rng.gen_range(4..7)];
            src.extend((1..src_len).map(|_| rng.gen_range(first..cfg.src_vocab_size)));
            let body: Vec<usize> = (0..rng.gen_range(1..cfg.seq_len))
                .map(|_| rng.gen_range(first..cfg.tgt_vocab_size))
                .collect();
            let mut tgt_in = vec![START];
            tgt_in.extend(&body);
            let mut tgt_out = body;
            tgt_out.push(END);
            Example {
                src_len,
                src,
                tgt_len: tgt_in.len(),
                tgt_in,
                tgt_out,
            }
            .padded(cfg.seq_len)
        })
        .collect()
}

pub fn batch_loss(batch: &[Example], params: &Parameters, cfg: &ModelConfig) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for e in batch {
        let (l, c) = example_loss(e, params, cfg).unwrap();
        total += l;
        count += c;
    }
    total / count as f64
}

pub struct GradReport {
    pub checked: usize,
    pub max_rel: f64,
    pub worst: String,
}

pub const REL_FLOOR: f64 = 1e-6;

/// Compares analytic gradients to central differences for every scalar.
pub fn grad_check(batch: &[Example], params: &Parameters, cfg: &ModelConfig) -> GradReport {
    let (_, grads) = loss_and_grads(batch, params, cfg).unwrap();
    let names = params.names();
    let mut report = GradReport {
        checked: 0,
        max_rel: 0.0,
        worst: String::new(),
    };
    let mut probe = params.clone();
    for (ti, name) in names.iter().enumerate() {
        let len = params.tensors()[ti].len();
        for k in 0..len {
            let theta = params.tensors()[ti].as_slice().unwrap()[k];
            let h = 1e-5 * theta.abs().max(1.0);
            probe.tensors_mut()[ti].as_slice_mut().unwrap()[k] = theta + h;
            let up = batch_loss(batch, &probe, cfg);
            probe.tensors_mut()[ti].as_slice_mut().unwrap()[k] = theta - h;
            let down = batch_loss(batch, &probe, cfg);
            probe.tensors_mut()[ti].as_slice_mut().unwrap()[k] = theta;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.tensors()[ti].as_slice().unwrap()[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel {
                report.max_rel = rel;
                report.worst = format!("{name}[{k}] analytic {analytic:e} numeric {numeric:e}");
            }
        }
    }
    report
}

pub mod criteria;

pub mod control {
    use fsmt_core::label::FormalityLabel;
    use fsmt_core::lexicon::parse_annotated;
    use fsmt_core::metric::{matched_accuracy, EvalEntry, MatchMode, MetricResult};
    use fsmt_core::model::{
        build_vocab, decode, encode_pair, train, Checkpoint, DecodeConfig, History, ModelConfig, OptimizerKind,
        TrainConfig,
    };
    use fsmt_core::synth::{self, SynthSentence};
    use fsmt_core::textnorm::{tokenize_surfaces, NormalizationConfig};

    pub struct Setup {
        pub train_second: usize,
        pub train_neutral: usize,
        pub test_second: usize,
        pub epochs: usize,
        pub embed_dim: usize,
        pub latent_dim: usize,
        pub num_heads: usize,
        pub lr: f64,
        pub seed: u64,
        pub single_register: bool,
    }

    impl Default for Setup {
        fn default() -> Self {
            Self {
                train_second: 300,
                train_neutral: 100,
                test_second: 100,
                epochs: 40,
                embed_dim: 32,
                latent_dim: 64,
                num_heads: 4,
                lr: 3e-3,
                seed: 7,
                single_register: true,
            }
        }
    }

    pub struct Outcome {
        pub controlled_f: MetricResult,
        pub controlled_i: MetricResult,
        pub agnostic: MetricResult,
        pub controlled_history: History,
        pub agnostic_history: History,
        pub controlled: Checkpoint,
        pub test: Vec<SynthSentence>,
    }

    fn score(model: &Checkpoint, test: &[SynthSentence], label: FormalityLabel) -> MetricResult {
        let entries: Vec<EvalEntry> = test
            .iter()
            .map(|s| EvalEntry {
                hypothesis: decode(model, &s.source, label, &DecodeConfig::default()).unwrap().text,
                formal_ref: parse_annotated(&s.formal_tagged).unwrap(),
                informal_ref: parse_annotated(&s.informal_tagged).unwrap(),
            })
            .collect();
        matched_accuracy(&entries, MatchMode::All).unwrap()
    }

    pub fn run(setup: &Setup) -> Outcome {
        let (train_items, test) = synth::train_test(
            setup.train_second,
            setup.train_neutral,
            setup.test_second,
            0,
            setup.seed,
        );
        let pairs = if setup.single_register {
            synth::single_register_pairs(&train_items, setup.seed)
        } else {
            synth::text_pairs(&train_items)
        };
        let norm = NormalizationConfig::default();
        let src_vocab = build_vocab(pairs.iter().map(|p| tokenize_surfaces(&p.source, &norm)), 1);
        let tgt_vocab = build_vocab(pairs.iter().map(|p| tokenize_surfaces(&p.target, &norm)), 1);
        let tc = TrainConfig {
            epochs: setup.epochs,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            learning_rate: Some(setup.lr),
            seed: setup.seed,
            ..Default::default()
        };
        let fit = |control: bool| {
            let mut config = ModelConfig::new(setup.embed_dim, setup.latent_dim, setup.num_heads, 8)
                .with_vocab_sizes(src_vocab.len(), tgt_vocab.len());
            config.control = control;
            let examples: Vec<_> = pairs
                .iter()
                .map(|p| encode_pair(p, &src_vocab, &tgt_vocab, &config, &norm))
                .collect();
            let (params, history) = train(&examples, &[], &config, &tc).unwrap();
            (
                Checkpoint {
                    config,
                    params,
                    src_vocab: src_vocab.clone(),
                    tgt_vocab: tgt_vocab.clone(),
                    norm: norm.clone(),
                },
                history,
            )
        };
        let (controlled, controlled_history) = fit(true);
        let (agnostic_model, agnostic_history) = fit(false);
        Outcome {
            controlled_f: score(&controlled, &test, FormalityLabel::Formal),
            controlled_i: score(&controlled, &test, FormalityLabel::Informal),
            agnostic: score(&agnostic_model, &test, FormalityLabel::Formal),
            controlled_history,
            agnostic_history,
            controlled,
            test,
        }
    }
}
