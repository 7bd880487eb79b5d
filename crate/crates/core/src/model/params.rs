use ndarray::Array2;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;

const INIT_RANGE: f64 = 0.08;

/// Implements ordered tensor access for a struct whose fields are all
/// `Array2<f64>`. Biases and layer-norm vectors are stored as `1 × n` rows.
macro_rules! tensor_group {
    ($name:ident { $($field:ident),+ $(,)? }) => {
        impl $name {
            pub const FIELDS: &'static [&'static str] = &[$(stringify!($field)),+];

            pub fn tensors(&self) -> Vec<&Array2<f64>> {
                vec![$(&self.$field),+]
            }

            pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
                vec![$(&mut self.$field),+]
            }

            pub fn zeros_like(&self) -> Self {
                Self { $($field: Array2::zeros(self.$field.raw_dim())),+ }
            }
        }
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Array2<f64>,
    pub bq: Array2<f64>,
    pub wk: Array2<f64>,
    pub bk: Array2<f64>,
    pub wv: Array2<f64>,
    pub bv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bo: Array2<f64>,
}
tensor_group!(AttentionParams {
    wq,
    bq,
    wk,
    bk,
    wv,
    bv,
    wo,
    bo
});

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Array2<f64>,
    pub bias: Array2<f64>,
}
tensor_group!(LayerNormParams { gain, bias });

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardParams {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}
tensor_group!(FeedForwardParams { w1, b1, w2, b2 });

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    pub self_attn: AttentionParams,
    pub norm1: LayerNormParams,
    pub ffn: FeedForwardParams,
    pub norm2: LayerNormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayerParams {
    pub self_attn: AttentionParams,
    pub norm1: LayerNormParams,
    pub cross_attn: AttentionParams,
    pub norm2: LayerNormParams,
    pub control_attn: AttentionParams,
    pub norm3: LayerNormParams,
    pub ffn: FeedForwardParams,
    pub norm4: LayerNormParams,
}

/// Every trainable tensor of the model. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub src_embed: Array2<f64>,
    pub src_pos: Array2<f64>,
    pub tgt_embed: Array2<f64>,
    pub tgt_pos: Array2<f64>,
    pub encoder: Vec<EncoderLayerParams>,
    pub decoder: Vec<DecoderLayerParams>,
    pub out_w: Array2<f64>,
    pub out_b: Array2<f64>,
}

struct Init {
    rng: ChaCha8Rng,
    dist: Uniform<f64>,
}

impl Init {
    fn uniform(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || self.dist.sample(&mut self.rng))
    }

    fn attention(&mut self, d: usize) -> AttentionParams {
        AttentionParams {
            wq: self.uniform(d, d),
            bq: Array2::zeros((1, d)),
            wk: self.uniform(d, d),
            bk: Array2::zeros((1, d)),
            wv: self.uniform(d, d),
            bv: Array2::zeros((1, d)),
            wo: self.uniform(d, d),
            bo: Array2::zeros((1, d)),
        }
    }

    fn norm(d: usize) -> LayerNormParams {
        LayerNormParams {
            gain: Array2::ones((1, d)),
            bias: Array2::zeros((1, d)),
        }
    }

    fn ffn(&mut self, d: usize, latent: usize) -> FeedForwardParams {
        FeedForwardParams {
            w1: self.uniform(d, latent),
            b1: Array2::zeros((1, latent)),
            w2: self.uniform(latent, d),
            b2: Array2::zeros((1, d)),
        }
    }
}

impl Parameters {
    /// Uniform(−0.08, 0.08) weights, zero biases, unit layer-norm gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dist: Uniform::new_inclusive(-INIT_RANGE, INIT_RANGE),
        };
        let d = cfg.embed_dim;
        let src_embed = init.uniform(cfg.src_vocab_size, d);
        let src_pos = init.uniform(cfg.seq_len, d);
        let tgt_embed = init.uniform(cfg.tgt_vocab_size, d);
        let tgt_pos = init.uniform(cfg.seq_len, d);
        let encoder = (0..cfg.encoder_layers)
            .map(|_| EncoderLayerParams {
                self_attn: init.attention(d),
                norm1: Init::norm(d),
                ffn: init.ffn(d, cfg.latent_dim),
                norm2: Init::norm(d),
            })
            .collect();
        let decoder = (0..cfg.decoder_layers)
            .map(|_| DecoderLayerParams {
                self_attn: init.attention(d),
                norm1: Init::norm(d),
                cross_attn: init.attention(d),
                norm2: Init::norm(d),
                control_attn: init.attention(d),
                norm3: Init::norm(d),
                ffn: init.ffn(d, cfg.latent_dim),
                norm4: Init::norm(d),
            })
            .collect();
        Self {
            src_embed,
            src_pos,
            tgt_embed,
            tgt_pos,
            encoder,
            decoder,
            out_w: init.uniform(d, cfg.tgt_vocab_size),
            out_b: Array2::zeros((1, cfg.tgt_vocab_size)),
        }
    }

    /// All-zero parameters with the shapes implied by `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self::init(cfg, 0).zeros_like()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Tensor names in the canonical order shared by [`Self::tensors`].
    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["src_embed", "src_pos", "tgt_embed", "tgt_pos"]
            .map(String::from)
            .into();
        let group = |names: &mut Vec<String>, prefix: &str, fields: &[&str]| {
            names.extend(fields.iter().map(|f| format!("{prefix}.{f}")));
        };
        for i in 0..self.encoder.len() {
            let p = format!("encoder.{i}");
            group(&mut names, &format!("{p}.self_attn"), AttentionParams::FIELDS);
            group(&mut names, &format!("{p}.norm1"), LayerNormParams::FIELDS);
            group(&mut names, &format!("{p}.ffn"), FeedForwardParams::FIELDS);
            group(&mut names, &format!("{p}.norm2"), LayerNormParams::FIELDS);
        }
        for i in 0..self.decoder.len() {
            let p = format!("decoder.{i}");
            group(&mut names, &format!("{p}.self_attn"), AttentionParams::FIELDS);
            group(&mut names, &format!("{p}.norm1"), LayerNormParams::FIELDS);
            group(&mut names, &format!("{p}.cross_attn"), AttentionParams::FIELDS);
            group(&mut names, &format!("{p}.norm2"), LayerNormParams::FIELDS);
            group(&mut names, &format!("{p}.control_attn"), AttentionParams::FIELDS);
            group(&mut names, &format!("{p}.norm3"), LayerNormParams::FIELDS);
            group(&mut names, &format!("{p}.ffn"), FeedForwardParams::FIELDS);
            group(&mut names, &format!("{p}.norm4"), LayerNormParams::FIELDS);
        }
        names.push("out_w".into());
        names.push("out_b".into());
        names
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = vec![&self.src_embed, &self.src_pos, &self.tgt_embed, &self.tgt_pos];
        for l in &self.encoder {
            out.extend(l.self_attn.tensors());
            out.extend(l.norm1.tensors());
            out.extend(l.ffn.tensors());
            out.extend(l.norm2.tensors());
        }
        for l in &self.decoder {
            out.extend(l.self_attn.tensors());
            out.extend(l.norm1.tensors());
            out.extend(l.cross_attn.tensors());
            out.extend(l.norm2.tensors());
            out.extend(l.control_attn.tensors());
            out.extend(l.norm3.tensors());
            out.extend(l.ffn.tensors());
            out.extend(l.norm4.tensors());
        }
        out.push(&self.out_w);
        out.push(&self.out_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![
            &mut self.src_embed,
            &mut self.src_pos,
            &mut self.tgt_embed,
            &mut self.tgt_pos,
        ];
        for l in &mut self.encoder {
            out.extend(l.self_attn.tensors_mut());
            out.extend(l.norm1.tensors_mut());
            out.extend(l.ffn.tensors_mut());
            out.extend(l.norm2.tensors_mut());
        }
        for l in &mut self.decoder {
            out.extend(l.self_attn.tensors_mut());
            out.extend(l.norm1.tensors_mut());
            out.extend(l.cross_attn.tensors_mut());
            out.extend(l.norm2.tensors_mut());
            out.extend(l.control_attn.tensors_mut());
            out.extend(l.norm3.tensors_mut());
            out.extend(l.ffn.tensors_mut());
            out.extend(l.norm4.tensors_mut());
        }
        out.push(&mut self.out_w);
        out.push(&mut self.out_b);
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Parameters) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Checks that the tensor shapes match what `cfg` implies.
    pub fn matches_config(&self, cfg: &ModelConfig) -> bool {
        let expected = Self::zeros(cfg);
        self.encoder.len() == expected.encoder.len()
            && self.decoder.len() == expected.decoder.len()
            && self
                .tensors()
                .iter()
                .zip(expected.tensors())
                .all(|(a, b)| a.dim() == b.dim())
    }
}
