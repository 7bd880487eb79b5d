//! Forward and backward passes for the building blocks. Every forward
//! returns a cache holding exactly what its backward needs.

use ndarray::{s, Array2, ArrayView2, Axis};

use super::params::{AttentionParams, FeedForwardParams, LayerNormParams};

const LN_EPS: f64 = 1e-5;

/// Attention mask, `true` where a query row may attend to a key column.
pub type Mask = Array2<bool>;

fn linear(x: &ArrayView2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    x.dot(w) + b
}

/// Accumulates parameter gradients of `y = x·w + b` and returns `dy·wᵀ`.
fn linear_backward(
    x: &ArrayView2<f64>,
    w: &Array2<f64>,
    dy: &Array2<f64>,
    gw: &mut Array2<f64>,
    gb: &mut Array2<f64>,
) -> Array2<f64> {
    ndarray::linalg::general_mat_mul(1.0, &x.t(), dy, 1.0, gw);
    *gb += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    dy.dot(&w.t())
}

pub struct LayerNormCache {
    normalized: Array2<f64>,
    inv_std: Vec<f64>,
}

pub fn layer_norm_forward(x: &Array2<f64>, p: &LayerNormParams) -> (Array2<f64>, LayerNormCache) {
    let n = x.ncols() as f64;
    let mut normalized = x.clone();
    let mut inv_std = Vec::with_capacity(x.nrows());
    for mut row in normalized.rows_mut() {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / n;
        let is = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| v * is);
        inv_std.push(is);
    }
    let y = &normalized * &p.gain + &p.bias;
    (y, LayerNormCache { normalized, inv_std })
}

pub fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LayerNormCache,
    p: &LayerNormParams,
    g: &mut LayerNormParams,
) -> Array2<f64> {
    g.gain += &(dy * &cache.normalized).sum_axis(Axis(0)).insert_axis(Axis(0));
    g.bias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * &p.gain;
    let n = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (r, mut out) in dx.rows_mut().into_iter().enumerate() {
        let dh = dxhat.row(r);
        let xh = cache.normalized.row(r);
        let sum_dh = dh.sum();
        let sum_dh_xh = dh.dot(&xh);
        let is = cache.inv_std[r];
        for c in 0..out.len() {
            out[c] = is / n * (n * dh[c] - sum_dh - xh[c] * sum_dh_xh);
        }
    }
    dx
}

pub struct FeedForwardCache {
    input: Array2<f64>,
    hidden: Array2<f64>,
}

pub fn feed_forward_forward(x: &Array2<f64>, p: &FeedForwardParams) -> (Array2<f64>, FeedForwardCache) {
    let mut hidden = linear(&x.view(), &p.w1, &p.b1);
    hidden.mapv_inplace(|v| v.max(0.0));
    let y = linear(&hidden.view(), &p.w2, &p.b2);
    (
        y,
        FeedForwardCache {
            input: x.clone(),
            hidden,
        },
    )
}

pub fn feed_forward_backward(
    dy: &Array2<f64>,
    cache: &FeedForwardCache,
    p: &FeedForwardParams,
    g: &mut FeedForwardParams,
) -> Array2<f64> {
    let mut dh = linear_backward(&cache.hidden.view(), &p.w2, dy, &mut g.w2, &mut g.b2);
    ndarray::Zip::from(&mut dh).and(&cache.hidden).for_each(|d, &h| {
        if h <= 0.0 {
            *d = 0.0;
        }
    });
    linear_backward(&cache.input.view(), &p.w1, &dh, &mut g.w1, &mut g.b1)
}

pub struct AttentionCache {
    query_in: Array2<f64>,
    kv_in: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention weights per head, `query_len × key_len`.
    pub weights: Vec<Array2<f64>>,
    concat: Array2<f64>,
}

/// Row-wise softmax over allowed entries. Rows with no allowed entry become
/// all zeros.
fn masked_softmax(scores: &mut Array2<f64>, mask: &Mask) {
    for (mut row, allowed) in scores.rows_mut().into_iter().zip(mask.rows()) {
        let max = row
            .iter()
            .zip(allowed)
            .filter(|(_, &a)| a)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            row.fill(0.0);
            continue;
        }
        let mut sum = 0.0;
        for (v, &a) in row.iter_mut().zip(allowed) {
            *v = if a { (*v - max).exp() } else { 0.0 };
            sum += *v;
        }
        row.mapv_inplace(|v| v / sum);
    }
}

/// Scaled dot-product attention with `num_heads` heads. `mask` is
/// `query_len × key_len`.
pub fn attention_forward(
    query_in: &Array2<f64>,
    kv_in: &Array2<f64>,
    mask: &Mask,
    p: &AttentionParams,
    num_heads: usize,
) -> (Array2<f64>, AttentionCache) {
    let d = query_in.ncols();
    let dh = d / num_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    assert_eq!(mask.dim(), (query_in.nrows(), kv_in.nrows()), "attention mask shape");
    let q = linear(&query_in.view(), &p.wq, &p.bq);
    let k = linear(&kv_in.view(), &p.wk, &p.bk);
    let v = linear(&kv_in.view(), &p.wv, &p.bv);
    let mut concat = Array2::zeros((query_in.nrows(), d));
    let mut weights = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t());
        scores.mapv_inplace(|x| x * scale);
        masked_softmax(&mut scores, mask);
        concat.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        weights.push(scores);
    }
    let out = linear(&concat.view(), &p.wo, &p.bo);
    let cache = AttentionCache {
        query_in: query_in.clone(),
        kv_in: kv_in.clone(),
        q,
        k,
        v,
        weights,
        concat,
    };
    (out, cache)
}

/// Returns gradients with respect to the query input and the key/value input.
pub fn attention_backward(
    dout: &Array2<f64>,
    cache: &AttentionCache,
    p: &AttentionParams,
    g: &mut AttentionParams,
) -> (Array2<f64>, Array2<f64>) {
    let num_heads = cache.weights.len();
    let d = cache.q.ncols();
    let dh = d / num_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let dconcat = linear_backward(&cache.concat.view(), &p.wo, dout, &mut g.wo, &mut g.bo);
    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for (h, weights) in cache.weights.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dout_h = dconcat.slice(cols);
        dv.slice_mut(cols).assign(&weights.t().dot(&dout_h));
        let dweights = dout_h.dot(&cache.v.slice(cols).t());
        // Softmax backward: dS = P ⊙ (dP − rowsum(dP ⊙ P)).
        let mut dscores = dweights;
        for (mut drow, prow) in dscores.rows_mut().into_iter().zip(weights.rows()) {
            let dot = drow.dot(&prow);
            for (dv, &pv) in drow.iter_mut().zip(prow) {
                *dv = pv * (*dv - dot) * scale;
            }
        }
        dq.slice_mut(cols).assign(&dscores.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&dscores.t().dot(&cache.q.slice(cols)));
    }
    let dquery = linear_backward(&cache.query_in.view(), &p.wq, &dq, &mut g.wq, &mut g.bq);
    let dkv = linear_backward(&cache.kv_in.view(), &p.wk, &dk, &mut g.wk, &mut g.bk)
        + linear_backward(&cache.kv_in.view(), &p.wv, &dv, &mut g.wv, &mut g.bv);
    (dquery, dkv)
}
