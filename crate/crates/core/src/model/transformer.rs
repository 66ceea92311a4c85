//! Single-block transformer encoder classifier.
//!
//! ```text
//! ids ─ embedding + sinusoidal positions
//!     ─ encoder block (multi-head self-attention, feed-forward, post-norm residuals)
//!     ─ additive attention pooling
//!     ─ dropout ─ dense(d→d, ReLU) ─ dropout ─ linear(d→classes) ─ softmax
//! ```
//!
//! Padded positions (id 0) are masked out of attention keys and of the
//! pooling softmax, so appending padding never changes the output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{embedding, glorot, uniform};
use super::{check_ids, pad_mask, ParamSet, TransformerConfig, LAYER_NORM_EPS, MASK_PENALTY};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sinusoidal position table: `sin` on even columns, `cos` on odd ones.
pub fn positional_encoding(length: usize, d: usize) -> Result<Tensor> {
    if !d.is_multiple_of(2) {
        return Err(Error::Shape(format!(
            "positional encoding needs an even width, got {d}"
        )));
    }
    let mut data = vec![0.0; length * d];
    for pos in 0..length {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            data[pos * d + 2 * i] = angle.sin();
            data[pos * d + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::matrix(length, d, data)
}

pub(crate) fn init_params(cfg: &TransformerConfig, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, hs, ff, c) = (cfg.embedding_dim, cfg.head_size, cfg.ff_dim, cfg.num_classes);
    let mut p = ParamSet::new();
    p.push("embedding", embedding(cfg.vocab_size, d, &mut rng));
    p.push("attention.query", glorot(d, hs, &mut rng));
    p.push("attention.key", glorot(d, hs, &mut rng));
    p.push("attention.value", glorot(d, hs, &mut rng));
    p.push("attention.output", glorot(hs, d, &mut rng));
    p.push("ffn.w1", glorot(d, ff, &mut rng));
    p.push("ffn.b1", Tensor::zeros(&[ff]));
    p.push("ffn.w2", glorot(ff, d, &mut rng));
    p.push("ffn.b2", Tensor::zeros(&[d]));
    p.push("norm1.gain", Tensor::filled(&[d], 1.0));
    p.push("norm1.shift", Tensor::zeros(&[d]));
    p.push("norm2.gain", Tensor::filled(&[d], 1.0));
    p.push("norm2.shift", Tensor::zeros(&[d]));
    p.push("pooling.projection", glorot(d, d, &mut rng));
    let context_limit = (6.0 / (d + 1) as f64).sqrt();
    p.push("pooling.context", uniform(&[d], context_limit, &mut rng));
    p.push("hidden.weight", glorot(d, d, &mut rng));
    p.push("hidden.bias", Tensor::zeros(&[d]));
    p.push("output.weight", glorot(d, c, &mut rng));
    p.push("output.bias", Tensor::zeros(&[c]));
    p
}

/// Graph handles for the encoder block parameters.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub query: Var,
    pub key: Var,
    pub value: Var,
    pub output: Var,
    pub ff_w1: Var,
    pub ff_b1: Var,
    pub ff_w2: Var,
    pub ff_b2: Var,
    pub norm1_gain: Var,
    pub norm1_shift: Var,
    pub norm2_gain: Var,
    pub norm2_shift: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct PoolingVars {
    pub projection: Var,
    pub context: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct TransformerVars {
    pub embedding: Var,
    pub encoder: EncoderVars,
    pub pooling: PoolingVars,
    pub hidden_w: Var,
    pub hidden_b: Var,
    pub out_w: Var,
    pub out_b: Var,
}

impl TransformerVars {
    /// Registers every parameter of `params` as a graph leaf.
    pub fn register(g: &mut Graph, params: &ParamSet) -> Result<Self> {
        let mut var = |name: &str| -> Result<Var> {
            let id = params.index(name)?;
            Ok(g.param(id, params.tensor(id).clone()))
        };
        Ok(Self {
            embedding: var("embedding")?,
            encoder: EncoderVars {
                query: var("attention.query")?,
                key: var("attention.key")?,
                value: var("attention.value")?,
                output: var("attention.output")?,
                ff_w1: var("ffn.w1")?,
                ff_b1: var("ffn.b1")?,
                ff_w2: var("ffn.w2")?,
                ff_b2: var("ffn.b2")?,
                norm1_gain: var("norm1.gain")?,
                norm1_shift: var("norm1.shift")?,
                norm2_gain: var("norm2.gain")?,
                norm2_shift: var("norm2.shift")?,
            },
            pooling: PoolingVars {
                projection: var("pooling.projection")?,
                context: var("pooling.context")?,
            },
            hidden_w: var("hidden.weight")?,
            hidden_b: var("hidden.bias")?,
            out_w: var("output.weight")?,
            out_b: var("output.bias")?,
        })
    }
}

fn penalty(mask: &[bool]) -> Tensor {
    Tensor::vector(
        mask.iter()
            .map(|&m| if m { MASK_PENALTY } else { 0.0 })
            .collect(),
    )
}

/// Multi-head scaled dot-product self-attention. Returns the projected
/// output and one `L×L` weight matrix per head.
pub fn self_attention(
    g: &mut Graph,
    x: Var,
    vars: &EncoderVars,
    cfg: &TransformerConfig,
    mask: &[bool],
) -> Result<(Var, Vec<Var>)> {
    let len = g.value(x).rows();
    if mask.len() != len {
        return Err(Error::Shape(format!(
            "mask of {} for {len} positions",
            mask.len()
        )));
    }
    let q = g.matmul(x, vars.query)?;
    let k = g.matmul(x, vars.key)?;
    let v = g.matmul(x, vars.value)?;
    let key_penalty = g.constant(penalty(mask));
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let mut heads = Vec::with_capacity(cfg.num_heads);
    let mut weights = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = g.slice_cols(q, lo, hi)?;
        let kh = g.slice_cols(k, lo, hi)?;
        let vh = g.slice_cols(v, lo, hi)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale);
        let scores = g.add_bias(scores, key_penalty)?;
        let w = g.softmax(scores);
        heads.push(g.matmul(w, vh)?);
        weights.push(w);
    }
    let joined = g.concat_cols(&heads)?;
    Ok((g.matmul(joined, vars.output)?, weights))
}

/// Post-norm encoder block:
/// `y = LN(x + drop(attn(x)))`, `out = LN(y + drop(ffn(y)))`.
pub fn encoder_block(
    g: &mut Graph,
    x: Var,
    vars: &EncoderVars,
    cfg: &TransformerConfig,
    mask: &[bool],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(Var, Vec<Var>)> {
    let (attn, weights) = self_attention(g, x, vars, cfg, mask)?;
    let attn = g.dropout(attn, cfg.dropout_rate, rng.as_deref_mut());
    let res = g.add(x, attn)?;
    let y = g.layer_norm(res, vars.norm1_gain, vars.norm1_shift, LAYER_NORM_EPS)?;

    let h = g.matmul(y, vars.ff_w1)?;
    let h = g.add_bias(h, vars.ff_b1)?;
    let h = g.relu(h);
    let f = g.matmul(h, vars.ff_w2)?;
    let f = g.add_bias(f, vars.ff_b2)?;
    let f = g.dropout(f, cfg.dropout_rate, rng);
    let res = g.add(y, f)?;
    let out = g.layer_norm(res, vars.norm2_gain, vars.norm2_shift, LAYER_NORM_EPS)?;
    Ok((out, weights))
}

/// Additive attention pooling: `score_i = u · tanh(W xᵢ)` over unmasked
/// rows, softmax, weighted row sum. Returns the pooled `1×d` vector and the
/// `1×L` weights.
pub fn attention_pooling(
    g: &mut Graph,
    x: Var,
    vars: &PoolingVars,
    mask: &[bool],
) -> Result<(Var, Var)> {
    let len = g.value(x).rows();
    if mask.len() != len {
        return Err(Error::Shape(format!(
            "mask of {} for {len} positions",
            mask.len()
        )));
    }
    if mask.iter().all(|&m| m) {
        return Err(Error::EmptyWindow);
    }
    let d = g.value(vars.context).len();
    let proj = g.matmul(x, vars.projection)?;
    let act = g.tanh(proj);
    let u = g.reshape(vars.context, &[d, 1])?;
    let scores = g.matmul(act, u)?;
    let scores = g.reshape(scores, &[1, len])?;
    let pen = g.constant(penalty(mask));
    let scores = g.add_bias(scores, pen)?;
    let weights = g.softmax(scores);
    Ok((g.matmul(weights, x)?, weights))
}

/// Graph handles produced by [`build_forward`].
#[derive(Debug, Clone)]
pub struct TransformerForward {
    pub probs: Var,
    pub attention: Vec<Var>,
    pub pooling: Var,
}

pub fn build_forward(
    g: &mut Graph,
    params: &ParamSet,
    cfg: &TransformerConfig,
    ids: &[usize],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<TransformerForward> {
    check_ids(ids, cfg.vocab_size, cfg.max_length)?;
    if ids.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let mask = pad_mask(ids);
    let vars = TransformerVars::register(g, params)?;
    let emb = g.gather(vars.embedding, ids)?;
    let pos = g.constant(positional_encoding(ids.len(), cfg.embedding_dim)?);
    let x = g.add(emb, pos)?;
    let (enc, attention) = encoder_block(g, x, &vars.encoder, cfg, &mask, rng.as_deref_mut())?;
    let (pooled, pooling) = attention_pooling(g, enc, &vars.pooling, &mask)?;
    let h = g.dropout(pooled, cfg.dropout_rate, rng.as_deref_mut());
    let h = g.matmul(h, vars.hidden_w)?;
    let h = g.add_bias(h, vars.hidden_b)?;
    let h = g.relu(h);
    let h = g.dropout(h, cfg.dropout_rate, rng);
    let logits = g.matmul(h, vars.out_w)?;
    let logits = g.add_bias(logits, vars.out_b)?;
    Ok(TransformerForward {
        probs: g.softmax(logits),
        attention,
        pooling,
    })
}

/// Per-head attention weights and pooling weights from one inference pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub heads: Vec<Tensor>,
    pub pooling: Vec<f64>,
}

pub fn forward(
    params: &ParamSet,
    cfg: &TransformerConfig,
    ids: &[usize],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let out = build_forward(&mut g, params, cfg, ids, rng)?;
    Ok(g.value(out.probs).data().to_vec())
}

/// Inference-mode forward that also returns the attention weights.
pub fn forward_with_trace(
    params: &ParamSet,
    cfg: &TransformerConfig,
    ids: &[usize],
) -> Result<(Vec<f64>, AttentionTrace)> {
    let mut g = Graph::new();
    let out = build_forward(&mut g, params, cfg, ids, None)?;
    let trace = AttentionTrace {
        heads: out.attention.iter().map(|&w| g.value(w).clone()).collect(),
        pooling: g.value(out.pooling).data().to_vec(),
    };
    Ok((g.value(out.probs).data().to_vec(), trace))
}
