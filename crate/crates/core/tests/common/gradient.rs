//! Whole-model gradient comparison shared by the gradient and acceptance
//! suites. Finite differences come from the double-double reference.

use evmscan::autodiff::{GradientSet, Graph};
use evmscan::model::{lstm, transformer, LstmConfig, Model, ModelConfig, TransformerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dd::Dd;
use super::reference::{self, DdParams};

pub const H: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-6;

pub fn tiny_transformer() -> ModelConfig {
    ModelConfig::Transformer(TransformerConfig {
        max_length: 6,
        embedding_dim: 8,
        num_heads: 2,
        head_size: 8,
        ff_dim: 16,
        dropout_rate: 0.2,
        num_classes: 2,
        vocab_size: 16,
    })
}

pub fn tiny_lstm() -> ModelConfig {
    ModelConfig::Lstm(LstmConfig {
        max_length: 6,
        embedding_dim: 8,
        hidden_size: 12,
        dropout_rate: 0.2,
        num_classes: 2,
        vocab_size: 16,
    })
}

/// BCE on the class-1 probability, inference mode.
fn loss(model: &Model, ids: &[usize], target: f64) -> (f64, GradientSet) {
    let mut g = Graph::new();
    let probs = match &model.config {
        ModelConfig::Transformer(c) => {
            transformer::build_forward(&mut g, &model.params, c, ids, None)
                .unwrap()
                .probs
        }
        ModelConfig::Lstm(c) => lstm::build_forward(&mut g, &model.params, c, ids, None).unwrap(),
    };
    let p1 = g.slice_cols(probs, 1, 2).unwrap();
    let l = g.binary_cross_entropy(p1, &[target]).unwrap();
    let grads = g.backward(l).unwrap();
    (g.value(l).data()[0], grads)
}

/// Returns the worst relative error over all entries with magnitude above 1e-8.
pub fn worst_relative_error(config: ModelConfig, seed: u64, ids: &[usize]) -> f64 {
    let mut model = Model::init(config.clone(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
    // Unit-scale parameters exercise the nonlinearities away from the origin.
    for id in 0..model.params.len() {
        for v in model.params.tensor_mut(id).data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    let target = (seed % 2) as f64;
    let (value, grads) = loss(&model, ids, target);

    let base = reference::bce(&DdParams::new(&model.params, None), &config, ids, target);
    assert!(
        (base.to_f64() - value).abs() <= 1e-12 * value.abs().max(1.0),
        "reference loss {} vs implementation {value}",
        base.to_f64()
    );

    let two_h = Dd::new(2.0 * H);
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for id in 0..model.params.len() {
        for k in 0..model.params.tensor(id).len() {
            let plus = DdParams::new(&model.params, Some((id, k, Dd::new(H))));
            let minus = DdParams::new(&model.params, Some((id, k, Dd::new(-H))));
            let numeric = ((reference::bce(&plus, &config, ids, target)
                - reference::bce(&minus, &config, ids, target))
                / two_h)
                .to_f64();
            let analytic = grads.get(&id).map_or(0.0, |g| g.data()[k]);
            let scale = analytic.abs().max(numeric.abs());
            if scale > 1e-8 {
                compared += 1;
                let rel = (analytic - numeric).abs() / scale;
                worst = worst.max(rel);
                if rel > TOLERANCE {
                    eprintln!(
                        "{} [{k}]: analytic {analytic:e} numeric {numeric:e} rel {rel:e}",
                        model.params.name(id)
                    );
                }
            }
        }
    }
    eprintln!("seed {seed}: {compared} entries, worst {worst:e}");
    assert!(compared > 0);
    worst
}

pub fn random_ids(seed: u64, pad_tail: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..6 - pad_tail).map(|_| rng.gen_range(1..16)).collect();
    ids.resize(6, 0);
    ids
}
