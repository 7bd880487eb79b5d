mod common;

use common::{random_examples, tiny_config};
use fsmt_core::model::{
    decoder_forward, default_control_positions, encoder_forward, teacher_forced_logits, Example, Parameters,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check_rows(w: &ndarray::Array2<f64>) {
    for row in w.rows() {
        assert!(row.iter().all(|&v| v >= 0.0));
        let s: f64 = row.sum();
        assert!((s - 1.0).abs() < 1e-12, "row sums to {s}");
    }
}

#[test]
fn attention_rows_are_distributions_in_every_block() {
    let cfg = tiny_config();
    for seed in 0..10 {
        let params = Parameters::init(&cfg, seed);
        for e in random_examples(&cfg, 4, seed) {
            let enc = encoder_forward(&e.src, e.src_len, &params, &cfg).unwrap();
            for w in enc.attention_weights() {
                check_rows(w);
                for row in w.rows() {
                    assert!(row.iter().skip(e.src_len).all(|&v| v == 0.0), "padding attended");
                }
            }
            let control = default_control_positions(&cfg, e.src_len);
            let dec = decoder_forward(&e.tgt_in, e.tgt_len, &enc, &control, &params, &cfg).unwrap();
            let mut blocks = 0;
            for w in dec.attention_weights() {
                check_rows(w);
                blocks += 1;
            }
            assert_eq!(blocks, 3 * cfg.num_heads);
            for w in dec.control_weights() {
                for row in w.rows() {
                    assert_eq!(row[0], 1.0);
                }
            }
        }
    }
}

#[test]
fn causal_probe() {
    let cfg = tiny_config();
    let params = Parameters::init(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for e in random_examples(&cfg, 20, 9) {
        let base = teacher_forced_logits(&e, &params, &cfg).unwrap();
        for t in 1..e.tgt_len {
            let mut probe = e.clone();
            probe.tgt_in[t] = rng.gen_range(7..cfg.tgt_vocab_size);
            let changed = teacher_forced_logits(&probe, &params, &cfg).unwrap();
            for s in 0..t {
                assert_eq!(base.row(s), changed.row(s), "position {s} saw token {t}");
            }
        }
    }
}

#[test]
fn padding_ids_never_change_logits() {
    let cfg = tiny_config();
    let params = Parameters::init(&cfg, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for e in random_examples(&cfg, 30, 10) {
        let base = teacher_forced_logits(&e, &params, &cfg).unwrap();
        for _ in 0..5 {
            let mut probe: Example = e.clone();
            for id in probe.src.iter_mut().skip(e.src_len) {
                *id = rng.gen_range(0..cfg.src_vocab_size);
            }
            for id in probe.tgt_in.iter_mut().skip(e.tgt_len) {
                *id = rng.gen_range(0..cfg.tgt_vocab_size);
            }
            let changed = teacher_forced_logits(&probe, &params, &cfg).unwrap();
            for t in 0..e.tgt_len {
                assert_eq!(base.row(t), changed.row(t));
            }
        }
    }
}

#[test]
fn padded_and_unpadded_examples_agree() {
    let cfg = tiny_config();
    let params = Parameters::init(&cfg, 8);
    for e in random_examples(&cfg, 10, 12) {
        let trimmed = Example {
            src: e.src[..e.src_len].to_vec(),
            src_len: e.src_len,
            tgt_in: e.tgt_in[..e.tgt_len].to_vec(),
            tgt_out: e.tgt_out[..e.tgt_len].to_vec(),
            tgt_len: e.tgt_len,
        };
        let a = teacher_forced_logits(&e, &params, &cfg).unwrap();
        let b = teacher_forced_logits(&trimmed, &params, &cfg).unwrap();
        for t in 0..e.tgt_len {
            for (x, y) in a.row(t).iter().zip(b.row(t)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
