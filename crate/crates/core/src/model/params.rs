use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered, named collection of trainable tensors. A tensor's position is
/// its [`ParamId`](crate::autodiff::ParamId).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.tensors[self.index(name)?])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let i = self.index(name)?;
        Ok(&mut self.tensors[i])
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn tensor(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn total(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Per-layer parameter counts, layers ordered by first appearance.
    pub fn counts(&self) -> ParamCounts {
        let mut layers: Vec<(String, usize)> = Vec::new();
        for (name, t) in self.iter() {
            let layer = layer_of(name);
            match layers.iter_mut().find(|(l, _)| l == layer) {
                Some((_, n)) => *n += t.len(),
                None => layers.push((layer.to_string(), t.len())),
            }
        }
        ParamCounts { layers }
    }
}

/// Reporting group for a parameter name.
fn layer_of(name: &str) -> &'static str {
    match name {
        "embedding" => "embedding",
        "attention.query" | "attention.key" | "attention.value" | "attention.output" => {
            "attention"
        }
        "pooling.projection" => "attention_pooling",
        "pooling.context" => "pooling_context",
        n if n.starts_with("ffn.") => "feed_forward",
        n if n.starts_with("norm") => "layer_norm",
        n if n.starts_with("lstm.") => "lstm",
        n if n.starts_with("hidden.") => "hidden_dense",
        n if n.starts_with("output.") => "output",
        _ => "other",
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCounts {
    pub layers: Vec<(String, usize)>,
}

impl ParamCounts {
    pub fn get(&self, layer: &str) -> Option<usize> {
        self.layers.iter().find(|(l, _)| l == layer).map(|(_, n)| *n)
    }

    pub fn total(&self) -> usize {
        self.layers.iter().map(|(_, n)| n).sum()
    }
}

impl fmt::Display for ParamCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (layer, n) in &self.layers {
            writeln!(f, "{layer:<20} {n:>10}")?;
        }
        write!(f, "{:<20} {:>10}", "total", self.total())
    }
}

/// Glorot-uniform `rows × cols` matrix.
pub(crate) fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    uniform(&[rows, cols], limit, rng)
}

/// Embedding table with unit-variance entries, on the same scale as the
/// sinusoidal position signal so token identity is not drowned out.
pub(crate) fn embedding(vocab: usize, d: usize, rng: &mut ChaCha8Rng) -> Tensor {
    uniform(&[vocab, d], 3f64.sqrt(), rng)
}

pub(crate) fn uniform(shape: &[usize], limit: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-limit..=limit)).collect(),
    )
    .expect("shape product matches buffer")
}
