//! Single-layer LSTM baseline.
//!
//! The recurrence runs over the non-padding tokens of a window in order and
//! classifies from the final hidden state. Gate layout inside the fused
//! `4h` projections is input, forget, candidate, output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{embedding, glorot};
use super::{check_ids, LstmConfig, ParamSet};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tokenizer::PAD;

pub(crate) fn init_params(cfg: &LstmConfig, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, h, c) = (cfg.embedding_dim, cfg.hidden_size, cfg.num_classes);
    let mut p = ParamSet::new();
    p.push("embedding", embedding(cfg.vocab_size, d, &mut rng));
    p.push("lstm.input", glorot(d, 4 * h, &mut rng));
    p.push("lstm.recurrent", glorot(h, 4 * h, &mut rng));
    let mut bias = vec![0.0; 4 * h];
    bias[h..2 * h].fill(1.0);
    p.push("lstm.bias", Tensor::vector(bias));
    p.push("hidden.weight", glorot(h, h, &mut rng));
    p.push("hidden.bias", Tensor::zeros(&[h]));
    p.push("output.weight", glorot(h, c, &mut rng));
    p.push("output.bias", Tensor::zeros(&[c]));
    p
}

/// Runs the recurrence and returns the final hidden state (`1×h`).
pub fn final_hidden(
    g: &mut Graph,
    params: &ParamSet,
    cfg: &LstmConfig,
    ids: &[usize],
) -> Result<Var> {
    let tokens: Vec<usize> = ids.iter().copied().filter(|&id| id != PAD).collect();
    if tokens.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let h = cfg.hidden_size;
    let mut var = |name: &str| -> Result<Var> {
        let id = params.index(name)?;
        Ok(g.param(id, params.tensor(id).clone()))
    };
    let embedding = var("embedding")?;
    let w_in = var("lstm.input")?;
    let w_rec = var("lstm.recurrent")?;
    let bias = var("lstm.bias")?;

    let x = g.gather(embedding, &tokens)?;
    let xw = g.matmul(x, w_in)?;
    let xw = g.add_bias(xw, bias)?;

    let mut hidden = g.constant(Tensor::zeros(&[1, h]));
    let mut cell = g.constant(Tensor::zeros(&[1, h]));
    for t in 0..tokens.len() {
        let xt = g.slice_rows(xw, t, t + 1)?;
        let rec = g.matmul(hidden, w_rec)?;
        let z = g.add(xt, rec)?;
        let i = g.slice_cols(z, 0, h)?;
        let i = g.sigmoid(i);
        let f = g.slice_cols(z, h, 2 * h)?;
        let f = g.sigmoid(f);
        let cand = g.slice_cols(z, 2 * h, 3 * h)?;
        let cand = g.tanh(cand);
        let o = g.slice_cols(z, 3 * h, 4 * h)?;
        let o = g.sigmoid(o);
        let keep = g.mul(f, cell)?;
        let write = g.mul(i, cand)?;
        cell = g.add(keep, write)?;
        let squashed = g.tanh(cell);
        hidden = g.mul(o, squashed)?;
    }
    Ok(hidden)
}

pub fn build_forward(
    g: &mut Graph,
    params: &ParamSet,
    cfg: &LstmConfig,
    ids: &[usize],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    check_ids(ids, cfg.vocab_size, cfg.max_length)?;
    let last = final_hidden(g, params, cfg, ids)?;
    let mut var = |name: &str| -> Result<Var> {
        let id = params.index(name)?;
        Ok(g.param(id, params.tensor(id).clone()))
    };
    let (hw, hb) = (var("hidden.weight")?, var("hidden.bias")?);
    let (ow, ob) = (var("output.weight")?, var("output.bias")?);
    let x = g.dropout(last, cfg.dropout_rate, rng.as_deref_mut());
    let x = g.matmul(x, hw)?;
    let x = g.add_bias(x, hb)?;
    let x = g.relu(x);
    let x = g.dropout(x, cfg.dropout_rate, rng);
    let logits = g.matmul(x, ow)?;
    let logits = g.add_bias(logits, ob)?;
    Ok(g.softmax(logits))
}

pub fn lstm_forward(
    params: &ParamSet,
    cfg: &LstmConfig,
    ids: &[usize],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let probs = build_forward(&mut g, params, cfg, ids, rng)?;
    Ok(g.value(probs).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> LstmConfig {
        LstmConfig {
            max_length: 16,
            embedding_dim: 8,
            hidden_size: 12,
            dropout_rate: 0.2,
            num_classes: 2,
            vocab_size: 16,
        }
    }

    #[test]
    fn zero_weights_keep_state_at_zero() {
        let cfg = small();
        let mut params = init_params(&cfg, 1);
        for name in ["lstm.input", "lstm.recurrent", "lstm.bias"] {
            params.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let h = final_hidden(&mut g, &params, &cfg, &[3, 4, 5, 6]).unwrap();
        assert!(g.value(h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_is_distribution_and_padding_is_ignored() {
        let cfg = LstmConfig {
            num_classes: 4,
            ..small()
        };
        let params = init_params(&cfg, 2);
        let p = lstm_forward(&params, &cfg, &[2, 7, 9], None).unwrap();
        assert_eq!(p.len(), 4);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let padded = lstm_forward(&params, &cfg, &[2, 7, 9, 0, 0, 0], None).unwrap();
        assert_eq!(p, padded);
        assert!(matches!(
            lstm_forward(&params, &cfg, &[0, 0], None),
            Err(Error::EmptyWindow)
        ));
    }

    #[test]
    fn parameter_counts() {
        let cfg = LstmConfig::default();
        let counts = init_params(&cfg, 0).counts();
        assert_eq!(counts.get("embedding"), Some(128_000));
        assert_eq!(counts.get("lstm"), Some(128 * 1024 + 256 * 1024 + 1024));
        assert_eq!(counts.get("output"), Some(256 * 2 + 2));
    }
}
