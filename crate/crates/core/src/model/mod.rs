//! Tag-controlled transformer encoder-decoder with hand-written backward
//! passes, trained and decoded entirely in `f64` on the CPU.
//!
//! The decoder has three attention blocks per layer: causal self-attention,
//! cross-attention over every encoder row, and a control block whose
//! cross-attention is masked down to the encoder rows holding the formality
//! control token.

mod checkpoint;
mod decode;
mod layers;
mod network;
mod optim;
mod params;
mod train;
mod vocab;

use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, stored_checksum, write_checkpoint, Checkpoint, CheckpointError,
    FORMAT_VERSION, MAGIC,
};
pub use decode::{decode, decode_ids, DecodeConfig, DecodeError, Hypothesis};
pub use layers::{attention_forward, AttentionCache, Mask};
pub use network::{
    decoder_forward, default_control_positions, embed, encoder_forward, example_loss, loss_and_grads,
    teacher_forced_logits, DecoderOutput, EncoderOutput, ModelError,
};
pub use optim::{LearningRateSchedule, Optimizer, OptimizerKind};
pub use params::{
    AttentionParams, DecoderLayerParams, EncoderLayerParams, FeedForwardParams, LayerNormParams, Parameters,
};
pub use train::{
    build_vocabularies, encode_pair, encode_source, pairs_from_annotated, token_accuracy, train, train_with_refresh,
    EpochRecord, Example, History, TextPair, TrainConfig, TrainError,
};
pub use vocab::{build_vocab, Vocabulary, END, FORMAL, INFORMAL, NEUTRAL, PAD, RESERVED, START, UNK};

use crate::label::FormalityLabel;

/// Where the control token sits in the source sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlPlacement {
    #[default]
    Prepend,
    Append,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub seq_len: usize,
    pub embed_dim: usize,
    pub latent_dim: usize,
    pub num_heads: usize,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    #[serde(default = "one")]
    pub encoder_layers: usize,
    #[serde(default = "one")]
    pub decoder_layers: usize,
    /// Whether sources carry a formality control token.
    #[serde(default = "yes")]
    pub control: bool,
    #[serde(default)]
    pub control_placement: ControlPlacement,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    pub fn new(embed_dim: usize, latent_dim: usize, num_heads: usize, seq_len: usize) -> Self {
        Self {
            seq_len,
            embed_dim,
            latent_dim,
            num_heads,
            src_vocab_size: RESERVED.len(),
            tgt_vocab_size: RESERVED.len(),
            encoder_layers: 1,
            decoder_layers: 1,
            control: true,
            control_placement: ControlPlacement::Prepend,
        }
    }

    pub fn with_vocab_sizes(mut self, src: usize, tgt: usize) -> Self {
        self.src_vocab_size = src;
        self.tgt_vocab_size = tgt;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.embed_dim == 0 || self.latent_dim == 0 || self.num_heads == 0 {
            return bad("embed_dim, latent_dim and num_heads must be at least 1".into());
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return bad(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.seq_len < 2 {
            return bad(format!("seq_len {} must be at least 2", self.seq_len));
        }
        if self.src_vocab_size < RESERVED.len() || self.tgt_vocab_size < RESERVED.len() {
            return bad("vocabularies must contain the reserved tokens".into());
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return bad("at least one encoder and one decoder layer is required".into());
        }
        Ok(())
    }
}

/// Source-side token id that requests a register.
pub fn control_token(label: FormalityLabel) -> usize {
    match label {
        FormalityLabel::Formal => FORMAL,
        FormalityLabel::Informal => INFORMAL,
        FormalityLabel::Neutral => NEUTRAL,
    }
}
