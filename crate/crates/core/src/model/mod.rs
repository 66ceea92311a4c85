//! Classifier architectures and their parameter containers.
//!
//! Both models are pure functions of a [`ParamSet`] and a window of token
//! ids. The [`Model`] wrapper dispatches on [`ModelConfig`] so training,
//! evaluation and scanning can treat the transformer and the LSTM baseline
//! uniformly.

pub mod checkpoint;
pub mod lstm;
pub mod params;
pub mod transformer;

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{GradientSet, Graph};
use crate::error::{Error, Result};

pub use params::{ParamCounts, ParamSet};

/// Epsilon inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Additive attention penalty for padded keys.
pub const MASK_PENALTY: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Transformer,
    Lstm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Transformer => "transformer",
            ModelKind::Lstm => "lstm",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transformer" => Ok(ModelKind::Transformer),
            "lstm" => Ok(ModelKind::Lstm),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

fn check_classes(num_classes: usize) -> Result<()> {
    if num_classes == 2 || num_classes == 4 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "num_classes must be 2 or 4, got {num_classes}"
        )))
    }
}

fn check_dropout(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerConfig {
    pub max_length: usize,
    pub embedding_dim: usize,
    pub num_heads: usize,
    /// Total attention width across all heads.
    pub head_size: usize,
    pub ff_dim: usize,
    pub dropout_rate: f64,
    pub num_classes: usize,
    pub vocab_size: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            max_length: 2048,
            embedding_dim: 128,
            num_heads: 4,
            head_size: 128,
            ff_dim: 4 * 128,
            dropout_rate: 0.2,
            num_classes: 2,
            vocab_size: crate::tokenizer::DEFAULT_CAPACITY,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        check_classes(self.num_classes)?;
        check_dropout(self.dropout_rate)?;
        if self.num_heads == 0 || !self.head_size.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "head_size {} not divisible by num_heads {}",
                self.head_size, self.num_heads
            )));
        }
        if self.embedding_dim == 0 || !self.embedding_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "embedding_dim must be even and positive, got {}",
                self.embedding_dim
            )));
        }
        if self.max_length == 0 || self.ff_dim == 0 || self.vocab_size < 2 {
            return Err(Error::Config(
                "max_length, ff_dim and vocab_size must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.head_size / self.num_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmConfig {
    pub max_length: usize,
    pub embedding_dim: usize,
    pub hidden_size: usize,
    pub dropout_rate: f64,
    pub num_classes: usize,
    pub vocab_size: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            max_length: 2048,
            embedding_dim: 128,
            hidden_size: 256,
            dropout_rate: 0.2,
            num_classes: 2,
            vocab_size: crate::tokenizer::DEFAULT_CAPACITY,
        }
    }
}

impl LstmConfig {
    pub fn validate(&self) -> Result<()> {
        check_classes(self.num_classes)?;
        check_dropout(self.dropout_rate)?;
        if self.hidden_size == 0 || self.embedding_dim == 0 || self.max_length == 0 {
            return Err(Error::Config(
                "hidden_size, embedding_dim and max_length must be positive".into(),
            ));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    Transformer(TransformerConfig),
    Lstm(LstmConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Transformer(_) => ModelKind::Transformer,
            ModelConfig::Lstm(_) => ModelKind::Lstm,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ModelConfig::Transformer(c) => c.num_classes,
            ModelConfig::Lstm(c) => c.num_classes,
        }
    }

    pub fn max_length(&self) -> usize {
        match self {
            ModelConfig::Transformer(c) => c.max_length,
            ModelConfig::Lstm(c) => c.max_length,
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            ModelConfig::Transformer(c) => c.vocab_size,
            ModelConfig::Lstm(c) => c.vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Transformer(c) => c.validate(),
            ModelConfig::Lstm(c) => c.validate(),
        }
    }

    /// `(key, value)` pairs as stored in checkpoint headers.
    pub fn to_fields(&self) -> Vec<(&'static str, String)> {
        match self {
            ModelConfig::Transformer(c) => vec![
                ("model", "transformer".into()),
                ("max_length", c.max_length.to_string()),
                ("embedding_dim", c.embedding_dim.to_string()),
                ("num_heads", c.num_heads.to_string()),
                ("head_size", c.head_size.to_string()),
                ("ff_dim", c.ff_dim.to_string()),
                ("dropout", format!("{:?}", c.dropout_rate)),
                ("num_classes", c.num_classes.to_string()),
                ("vocab_size", c.vocab_size.to_string()),
            ],
            ModelConfig::Lstm(c) => vec![
                ("model", "lstm".into()),
                ("max_length", c.max_length.to_string()),
                ("embedding_dim", c.embedding_dim.to_string()),
                ("head_dim", c.hidden_size.to_string()),
                ("dropout", format!("{:?}", c.dropout_rate)),
                ("num_classes", c.num_classes.to_string()),
                ("vocab_size", c.vocab_size.to_string()),
            ],
        }
    }

    pub fn from_fields(fields: &[(String, String)]) -> Result<Self> {
        let get = |key: &str| -> Result<&str> {
            fields
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Config(format!("missing config field {key}")))
        };
        let num = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::Config(format!("bad integer for {key}")))
        };
        let rate = get("dropout")?
            .parse()
            .map_err(|_| Error::Config("bad dropout".into()))?;
        let cfg = match get("model")?.parse()? {
            ModelKind::Transformer => ModelConfig::Transformer(TransformerConfig {
                max_length: num("max_length")?,
                embedding_dim: num("embedding_dim")?,
                num_heads: num("num_heads")?,
                head_size: num("head_size")?,
                ff_dim: num("ff_dim")?,
                dropout_rate: rate,
                num_classes: num("num_classes")?,
                vocab_size: num("vocab_size")?,
            }),
            ModelKind::Lstm => ModelConfig::Lstm(LstmConfig {
                max_length: num("max_length")?,
                embedding_dim: num("embedding_dim")?,
                hidden_size: num("head_dim")?,
                dropout_rate: rate,
                num_classes: num("num_classes")?,
                vocab_size: num("vocab_size")?,
            }),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A configured classifier with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
}

/// Output of a differentiable forward pass.
#[derive(Debug, Clone)]
pub struct LossAndGrads {
    pub loss: f64,
    pub probs: Vec<f64>,
    pub grads: GradientSet,
}

impl Model {
    /// Fresh parameters drawn from a seeded generator.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = match &config {
            ModelConfig::Transformer(c) => transformer::init_params(c, seed),
            ModelConfig::Lstm(c) => lstm::init_params(c, seed),
        };
        Ok(Self { config, params })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind()
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes()
    }

    pub fn param_count(&self) -> ParamCounts {
        self.params.counts()
    }

    fn build(&self, g: &mut Graph, ids: &[usize], rng: Option<&mut ChaCha8Rng>) -> Result<crate::autodiff::Var> {
        match &self.config {
            ModelConfig::Transformer(c) => {
                Ok(transformer::build_forward(g, &self.params, c, ids, rng)?.probs)
            }
            ModelConfig::Lstm(c) => lstm::build_forward(g, &self.params, c, ids, rng),
        }
    }

    /// Class probabilities for one window. `rng == None` is inference mode.
    pub fn forward(&self, ids: &[usize], rng: Option<&mut ChaCha8Rng>) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let probs = self.build(&mut g, ids, rng)?;
        Ok(g.value(probs).data().to_vec())
    }

    /// Cross-entropy loss against `target` and its parameter gradients.
    pub fn loss_and_grads(
        &self,
        ids: &[usize],
        target: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<LossAndGrads> {
        let mut g = Graph::new();
        let probs = self.build(&mut g, ids, rng)?;
        let loss = g.cross_entropy(probs, target)?;
        let grads = g.backward(loss)?;
        Ok(LossAndGrads {
            loss: g.value(loss).data()[0],
            probs: g.value(probs).data().to_vec(),
            grads,
        })
    }
}

/// Pad flags for a window: `true` where the id is PAD.
pub fn pad_mask(ids: &[usize]) -> Vec<bool> {
    ids.iter().map(|&id| id == crate::tokenizer::PAD).collect()
}

pub(crate) fn check_ids(ids: &[usize], vocab_size: usize, max_length: usize) -> Result<()> {
    if ids.len() > max_length {
        return Err(Error::Shape(format!(
            "window of {} tokens exceeds max_length {max_length}",
            ids.len()
        )));
    }
    if let Some(&id) = ids.iter().find(|&&id| id >= vocab_size) {
        return Err(Error::UnknownId {
            id,
            size: vocab_size,
        });
    }
    Ok(())
}
