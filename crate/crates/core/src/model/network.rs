use ndarray::{Array2, Axis};
use rayon::prelude::*;

use super::layers::{
    attention_backward, attention_forward, feed_forward_backward, feed_forward_forward, layer_norm_backward,
    layer_norm_forward, AttentionCache, FeedForwardCache, LayerNormCache, Mask,
};
use super::params::{DecoderLayerParams, EncoderLayerParams, Parameters};
use super::train::Example;
use super::{ControlPlacement, ModelConfig, START};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence of length {len} exceeds seq_len {seq_len}")]
    TooLong { len: usize, seq_len: usize },
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("decoder input must start with <start>")]
    MissingStart,
    #[error("non-finite loss or logits: {0}")]
    NonFinite(String),
}

/// Row `t` is `token_table[ids[t]] + position_table[t]`.
pub fn embed(
    ids: &[usize],
    token_table: &Array2<f64>,
    position_table: &Array2<f64>,
) -> Result<Array2<f64>, ModelError> {
    if ids.len() > position_table.nrows() {
        return Err(ModelError::TooLong {
            len: ids.len(),
            seq_len: position_table.nrows(),
        });
    }
    if token_table.ncols() != position_table.ncols() {
        return Err(ModelError::ShapeMismatch(
            "token and position tables differ in width".into(),
        ));
    }
    let mut out = Array2::zeros((ids.len(), token_table.ncols()));
    for (t, (&id, mut row)) in ids.iter().zip(out.rows_mut()).enumerate() {
        if id >= token_table.nrows() {
            return Err(ModelError::IdOutOfRange {
                id,
                size: token_table.nrows(),
            });
        }
        row.assign(&(&token_table.row(id) + &position_table.row(t)));
    }
    Ok(out)
}

fn embed_backward(ids: &[usize], d_embedded: &Array2<f64>, g_tokens: &mut Array2<f64>, g_positions: &mut Array2<f64>) {
    for (t, (&id, row)) in ids.iter().zip(d_embedded.rows()).enumerate() {
        let mut tok = g_tokens.row_mut(id);
        tok += &row;
        let mut pos = g_positions.row_mut(t);
        pos += &row;
    }
}

struct EncoderLayerCache {
    attn: AttentionCache,
    norm1: LayerNormCache,
    ffn: FeedForwardCache,
    norm2: LayerNormCache,
}

/// Encoder states plus everything needed for the backward pass.
pub struct EncoderOutput {
    pub states: Array2<f64>,
    ids: Vec<usize>,
    /// `true` for non-padding source positions.
    pub key_mask: Vec<bool>,
    layers: Vec<EncoderLayerCache>,
}

impl EncoderOutput {
    pub fn attention_weights(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.layers.iter().flat_map(|l| l.attn.weights.iter())
    }
}

fn encoder_layer_forward(
    x: &Array2<f64>,
    mask: &Mask,
    p: &EncoderLayerParams,
    heads: usize,
) -> (Array2<f64>, EncoderLayerCache) {
    let (a, attn) = attention_forward(x, x, mask, &p.self_attn, heads);
    let (h1, norm1) = layer_norm_forward(&(x + &a), &p.norm1);
    let (f, ffn) = feed_forward_forward(&h1, &p.ffn);
    let (out, norm2) = layer_norm_forward(&(&h1 + &f), &p.norm2);
    (
        out,
        EncoderLayerCache {
            attn,
            norm1,
            ffn,
            norm2,
        },
    )
}

fn encoder_layer_backward(
    dout: &Array2<f64>,
    c: &EncoderLayerCache,
    p: &EncoderLayerParams,
    g: &mut EncoderLayerParams,
) -> Array2<f64> {
    let d_res2 = layer_norm_backward(dout, &c.norm2, &p.norm2, &mut g.norm2);
    let d_h1 = &d_res2 + &feed_forward_backward(&d_res2, &c.ffn, &p.ffn, &mut g.ffn);
    let d_res1 = layer_norm_backward(&d_h1, &c.norm1, &p.norm1, &mut g.norm1);
    let (dq, dkv) = attention_backward(&d_res1, &c.attn, &p.self_attn, &mut g.self_attn);
    d_res1 + dq + dkv
}

/// Runs the encoder over `src_ids`; positions at or beyond `src_len` are
/// padding and are never attended to.
pub fn encoder_forward(
    src_ids: &[usize],
    src_len: usize,
    params: &Parameters,
    cfg: &ModelConfig,
) -> Result<EncoderOutput, ModelError> {
    if src_ids.len() > cfg.seq_len {
        return Err(ModelError::TooLong {
            len: src_ids.len(),
            seq_len: cfg.seq_len,
        });
    }
    if src_len > src_ids.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "src_len {src_len} > {} ids",
            src_ids.len()
        )));
    }
    let mut x = embed(src_ids, &params.src_embed, &params.src_pos)?;
    let key_mask: Vec<bool> = (0..src_ids.len()).map(|j| j < src_len).collect();
    let mask = Mask::from_shape_fn((src_ids.len(), src_ids.len()), |(_, j)| key_mask[j]);
    let mut layers = Vec::with_capacity(params.encoder.len());
    for layer in &params.encoder {
        let (out, cache) = encoder_layer_forward(&x, &mask, layer, cfg.num_heads);
        layers.push(cache);
        x = out;
    }
    Ok(EncoderOutput {
        states: x,
        ids: src_ids.to_vec(),
        key_mask,
        layers,
    })
}

fn encoder_backward(enc: &EncoderOutput, d_states: Array2<f64>, params: &Parameters, grads: &mut Parameters) {
    let mut d = d_states;
    for ((cache, p), g) in enc.layers.iter().zip(&params.encoder).zip(&mut grads.encoder).rev() {
        d = encoder_layer_backward(&d, cache, p, g);
    }
    embed_backward(&enc.ids, &d, &mut grads.src_embed, &mut grads.src_pos);
}

struct DecoderLayerCache {
    self_attn: AttentionCache,
    norm1: LayerNormCache,
    cross_attn: AttentionCache,
    norm2: LayerNormCache,
    control_attn: AttentionCache,
    norm3: LayerNormCache,
    ffn: FeedForwardCache,
    norm4: LayerNormCache,
}

struct DecoderMasks {
    causal: Mask,
    cross: Mask,
    control: Mask,
}

fn decoder_layer_forward(
    y: &Array2<f64>,
    enc: &Array2<f64>,
    masks: &DecoderMasks,
    p: &DecoderLayerParams,
    heads: usize,
) -> (Array2<f64>, DecoderLayerCache) {
    let (a1, self_attn) = attention_forward(y, y, &masks.causal, &p.self_attn, heads);
    let (z1, norm1) = layer_norm_forward(&(y + &a1), &p.norm1);
    let (a2, cross_attn) = attention_forward(&z1, enc, &masks.cross, &p.cross_attn, heads);
    let (z2, norm2) = layer_norm_forward(&(&z1 + &a2), &p.norm2);
    let (a3, control_attn) = attention_forward(&z2, enc, &masks.control, &p.control_attn, heads);
    let (z3, norm3) = layer_norm_forward(&(&z2 + &a3), &p.norm3);
    let (f, ffn) = feed_forward_forward(&z3, &p.ffn);
    let (z4, norm4) = layer_norm_forward(&(&z3 + &f), &p.norm4);
    (
        z4,
        DecoderLayerCache {
            self_attn,
            norm1,
            cross_attn,
            norm2,
            control_attn,
            norm3,
            ffn,
            norm4,
        },
    )
}

/// Returns the gradient for the layer input and accumulates the encoder
/// gradient into `d_enc`.
fn decoder_layer_backward(
    dout: &Array2<f64>,
    c: &DecoderLayerCache,
    p: &DecoderLayerParams,
    g: &mut DecoderLayerParams,
    d_enc: &mut Array2<f64>,
) -> Array2<f64> {
    let d_res4 = layer_norm_backward(dout, &c.norm4, &p.norm4, &mut g.norm4);
    let d_z3 = &d_res4 + &feed_forward_backward(&d_res4, &c.ffn, &p.ffn, &mut g.ffn);
    let d_res3 = layer_norm_backward(&d_z3, &c.norm3, &p.norm3, &mut g.norm3);
    let (dq3, dkv3) = attention_backward(&d_res3, &c.control_attn, &p.control_attn, &mut g.control_attn);
    *d_enc += &dkv3;
    let d_z2 = d_res3 + dq3;
    let d_res2 = layer_norm_backward(&d_z2, &c.norm2, &p.norm2, &mut g.norm2);
    let (dq2, dkv2) = attention_backward(&d_res2, &c.cross_attn, &p.cross_attn, &mut g.cross_attn);
    *d_enc += &dkv2;
    let d_z1 = d_res2 + dq2;
    let d_res1 = layer_norm_backward(&d_z1, &c.norm1, &p.norm1, &mut g.norm1);
    let (dq1, dkv1) = attention_backward(&d_res1, &c.self_attn, &p.self_attn, &mut g.self_attn);
    d_res1 + dq1 + dkv1
}

pub struct DecoderOutput {
    /// `tgt_len × tgt_vocab_size` vocabulary logits.
    pub logits: Array2<f64>,
    ids: Vec<usize>,
    final_states: Array2<f64>,
    layers: Vec<DecoderLayerCache>,
}

impl DecoderOutput {
    pub fn attention_weights(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.layers.iter().flat_map(|l| {
            l.self_attn
                .weights
                .iter()
                .chain(&l.cross_attn.weights)
                .chain(&l.control_attn.weights)
        })
    }

    /// Attention weights of the control block only.
    pub fn control_weights(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.layers.iter().flat_map(|l| l.control_attn.weights.iter())
    }
}

/// Encoder rows holding the control token for a source of `src_len` tokens.
pub fn default_control_positions(cfg: &ModelConfig, src_len: usize) -> Vec<usize> {
    if !cfg.control || src_len == 0 {
        return Vec::new();
    }
    match cfg.control_placement {
        ControlPlacement::Prepend => vec![0],
        ControlPlacement::Append => vec![src_len - 1],
    }
}

/// Runs the decoder teacher-forced over `tgt_ids`. Target positions at or
/// beyond `tgt_len` are padding. The control block attends only to
/// `control_positions`; when none are valid it falls back to position 0.
pub fn decoder_forward(
    tgt_ids: &[usize],
    tgt_len: usize,
    enc: &EncoderOutput,
    control_positions: &[usize],
    params: &Parameters,
    cfg: &ModelConfig,
) -> Result<DecoderOutput, ModelError> {
    if tgt_ids.first() != Some(&START) {
        return Err(ModelError::MissingStart);
    }
    if tgt_ids.len() > cfg.seq_len {
        return Err(ModelError::TooLong {
            len: tgt_ids.len(),
            seq_len: cfg.seq_len,
        });
    }
    if tgt_len > tgt_ids.len() || tgt_len == 0 {
        return Err(ModelError::ShapeMismatch(format!(
            "tgt_len {tgt_len} for {} ids",
            tgt_ids.len()
        )));
    }
    let (lq, lk) = (tgt_ids.len(), enc.states.nrows());
    let mut control: Vec<usize> = control_positions
        .iter()
        .copied()
        .filter(|&j| j < lk && enc.key_mask[j])
        .collect();
    if control.is_empty() {
        control.push(0);
    }
    let masks = DecoderMasks {
        causal: Mask::from_shape_fn((lq, lq), |(i, j)| j <= i && j < tgt_len),
        cross: Mask::from_shape_fn((lq, lk), |(_, j)| enc.key_mask[j]),
        control: Mask::from_shape_fn((lq, lk), |(_, j)| control.contains(&j)),
    };
    let mut y = embed(tgt_ids, &params.tgt_embed, &params.tgt_pos)?;
    let mut layers = Vec::with_capacity(params.decoder.len());
    for layer in &params.decoder {
        let (out, cache) = decoder_layer_forward(&y, &enc.states, &masks, layer, cfg.num_heads);
        layers.push(cache);
        y = out;
    }
    let logits = y.dot(&params.out_w) + &params.out_b;
    Ok(DecoderOutput {
        logits,
        ids: tgt_ids.to_vec(),
        final_states: y,
        layers,
    })
}

fn decoder_backward(
    dec: &DecoderOutput,
    dlogits: &Array2<f64>,
    params: &Parameters,
    grads: &mut Parameters,
    enc_rows: usize,
) -> Array2<f64> {
    ndarray::linalg::general_mat_mul(1.0, &dec.final_states.t(), dlogits, 1.0, &mut grads.out_w);
    grads.out_b += &dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
    let mut d = dlogits.dot(&params.out_w.t());
    let mut d_enc = Array2::zeros((enc_rows, params.out_w.nrows()));
    for ((cache, p), g) in dec.layers.iter().zip(&params.decoder).zip(&mut grads.decoder).rev() {
        d = decoder_layer_backward(&d, cache, p, g, &mut d_enc);
    }
    embed_backward(&dec.ids, &d, &mut grads.tgt_embed, &mut grads.tgt_pos);
    d_enc
}

/// Numerically stable log-softmax of one row.
pub(crate) fn log_softmax(row: ndarray::ArrayView1<f64>) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

fn run(
    example: &Example,
    params: &Parameters,
    cfg: &ModelConfig,
) -> Result<(EncoderOutput, DecoderOutput), ModelError> {
    let enc = encoder_forward(&example.src, example.src_len, params, cfg)?;
    let control = default_control_positions(cfg, example.src_len);
    let dec = decoder_forward(&example.tgt_in, example.tgt_len, &enc, &control, params, cfg)?;
    Ok((enc, dec))
}

/// Logits for a teacher-forced example.
pub fn teacher_forced_logits(
    example: &Example,
    params: &Parameters,
    cfg: &ModelConfig,
) -> Result<Array2<f64>, ModelError> {
    Ok(run(example, params, cfg)?.1.logits)
}

/// Summed cross-entropy and number of scored target positions.
pub fn example_loss(example: &Example, params: &Parameters, cfg: &ModelConfig) -> Result<(f64, usize), ModelError> {
    let logits = teacher_forced_logits(example, params, cfg)?;
    let mut total = 0.0;
    let mut count = 0;
    for t in example.scored_positions() {
        total -= log_softmax(logits.row(t))[example.tgt_out[t]];
        count += 1;
    }
    Ok((total, count))
}

/// Forward and backward for one example. `dlogits` rows are scaled by
/// `1 / normalizer`, so summing over a batch yields the batch-mean gradient.
fn example_grads(
    example: &Example,
    params: &Parameters,
    cfg: &ModelConfig,
    normalizer: f64,
) -> Result<(f64, Parameters), ModelError> {
    let (enc, dec) = run(example, params, cfg)?;
    let mut dlogits = Array2::zeros(dec.logits.raw_dim());
    let mut loss = 0.0;
    for t in example.scored_positions() {
        let logp = log_softmax(dec.logits.row(t));
        let target = example.tgt_out[t];
        loss -= logp[target];
        for (d, lp) in dlogits.row_mut(t).iter_mut().zip(&logp) {
            *d = lp.exp() / normalizer;
        }
        dlogits[[t, target]] -= 1.0 / normalizer;
    }
    let mut grads = params.zeros_like();
    let d_enc = decoder_backward(&dec, &dlogits, params, &mut grads, enc.states.nrows());
    encoder_backward(&enc, d_enc, params, &mut grads);
    Ok((loss, grads))
}

/// Mean cross-entropy over all non-padding target positions of the batch,
/// with analytic gradients for every parameter tensor. Examples are
/// processed in parallel and their gradients summed in batch order.
pub fn loss_and_grads(
    batch: &[Example],
    params: &Parameters,
    cfg: &ModelConfig,
) -> Result<(f64, Parameters), ModelError> {
    let tokens: usize = batch.iter().map(|e| e.scored_positions().count()).sum();
    if tokens == 0 {
        return Ok((0.0, params.zeros_like()));
    }
    let normalizer = tokens as f64;
    let per_example: Vec<(f64, Parameters)> = batch
        .par_iter()
        .map(|e| example_grads(e, params, cfg, normalizer))
        .collect::<Result<_, _>>()?;
    let mut iter = per_example.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        grads.add_assign(&g);
    }
    let loss = loss / normalizer;
    if !loss.is_finite() {
        return Err(ModelError::NonFinite(format!("batch loss {loss}")));
    }
    Ok((loss, grads))
}
