//! Formality-controlled English→Hindi machine translation toolkit.
//!
//! Pipeline: extract a formality lexicon from contrastive references
//! ([`lexicon`]), tag a parallel corpus with it ([`annotator`]), train a small
//! tag-controlled transformer ([`model`], [`hyperopt`]), and score outputs with
//! phrase-based matched accuracy ([`metric`]) or in-tag masked-token
//! prediction ([`mlm`]).

pub mod annotator;
pub mod corpus;
pub mod hyperopt;
pub mod label;
pub mod lexicon;
pub mod metric;
pub mod mlm;
pub mod model;
pub mod synth;
pub mod textnorm;

pub use label::FormalityLabel;

/// Derives an independent seed for a named pipeline stage from a global seed.
pub fn stage_seed(global: u64, stage: &str) -> u64 {
    // FNV-1a over the stage name, then a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = global ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
