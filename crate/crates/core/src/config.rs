//! One flat set of run settings covering both model families, training
//! and windowing, adjustable by `key=value` strings.
//!
//! ```
//! use evmscan::config::RunConfig;
//!
//! let mut cfg = RunConfig::default();
//! cfg.set("ff_dim", "4*128").unwrap();
//! cfg.set("learning_rate", "0.001").unwrap();
//! assert_eq!(cfg.transformer.ff_dim, 512);
//! assert!(cfg.set("no_such_key", "1").is_err());
//! ```

use crate::error::{Error, Result};
use crate::model::{LstmConfig, ModelConfig, ModelKind, TransformerConfig};
use crate::tokenizer::DEFAULT_CAPACITY;
use crate::training::{PipelineConfig, SplitSpec, TrainConfig};
use crate::window::WindowConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kind: ModelKind,
    pub transformer: TransformerConfig,
    pub lstm: LstmConfig,
    pub train: TrainConfig,
    pub window: WindowConfig,
    pub split: SplitSpec,
    pub vocab_capacity: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Transformer,
            transformer: TransformerConfig::default(),
            lstm: LstmConfig::default(),
            train: TrainConfig::default(),
            window: WindowConfig::default(),
            split: SplitSpec::default(),
            vocab_capacity: DEFAULT_CAPACITY,
        }
    }
}

/// Keys accepted by [`RunConfig::set`].
pub const KEYS: &[&str] = &[
    "model",
    "max_length",
    "embedding_dim",
    "batch_size",
    "learning_rate",
    "head_size",
    "head_dim",
    "hidden_size",
    "dropout",
    "num_heads",
    "ff_dim",
    "num_classes",
    "vocab_size",
    "epochs",
    "keep_best",
    "beta1",
    "beta2",
    "epsilon",
    "window_size",
    "overlap",
    "aggregation",
    "train_fraction",
    "val_fraction",
];

/// Integer, optionally written as a product such as `4*128`.
fn parse_count(key: &str, v: &str) -> Result<usize> {
    v.split('*')
        .map(|p| p.trim().parse::<usize>())
        .try_fold(1usize, |acc, x| x.ok().and_then(|x| acc.checked_mul(x)))
        .ok_or_else(|| Error::Config(format!("{key}: expected an integer, got {v:?}")))
}

fn parse_real(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected a number, got {v:?}")))
}

impl RunConfig {
    /// Applies one override. Shared keys (max_length, embedding_dim,
    /// dropout, num_classes, vocab_size) update both model families.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (t, l) = (&mut self.transformer, &mut self.lstm);
        match key {
            "model" => self.kind = value.parse()?,
            "max_length" => {
                t.max_length = parse_count(key, value)?;
                l.max_length = t.max_length;
            }
            "embedding_dim" => {
                t.embedding_dim = parse_count(key, value)?;
                l.embedding_dim = t.embedding_dim;
            }
            "dropout" => {
                t.dropout_rate = parse_real(key, value)?;
                l.dropout_rate = t.dropout_rate;
            }
            "num_classes" => self.set_num_classes(parse_count(key, value)?),
            "vocab_size" => {
                t.vocab_size = parse_count(key, value)?;
                l.vocab_size = t.vocab_size;
                self.vocab_capacity = t.vocab_size;
            }
            "head_size" => t.head_size = parse_count(key, value)?,
            "num_heads" => t.num_heads = parse_count(key, value)?,
            "ff_dim" => t.ff_dim = parse_count(key, value)?,
            "head_dim" | "hidden_size" => l.hidden_size = parse_count(key, value)?,
            "batch_size" => self.train.batch_size = parse_count(key, value)?,
            "epochs" => self.train.epochs = parse_count(key, value)?,
            "keep_best" => {
                self.train.keep_best = match value.trim() {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => return Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
                }
            }
            "learning_rate" => self.train.adam.learning_rate = parse_real(key, value)?,
            "beta1" => self.train.adam.beta1 = parse_real(key, value)?,
            "beta2" => self.train.adam.beta2 = parse_real(key, value)?,
            "epsilon" => self.train.adam.epsilon = parse_real(key, value)?,
            "window_size" => self.window.window_size = parse_count(key, value)?,
            "overlap" => self.window.overlap = parse_real(key, value)?,
            "aggregation" => self.window.aggregation = value.parse()?,
            "train_fraction" => self.split.train_fraction = parse_real(key, value)?,
            "val_fraction" => self.split.val_fraction = parse_real(key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown key {key:?} (known: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Parses and applies `key=value`.
    pub fn apply(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set_num_classes(&mut self, n: usize) {
        self.transformer.num_classes = n;
        self.lstm.num_classes = n;
    }

    pub fn num_classes(&self) -> usize {
        self.model().num_classes()
    }

    pub fn model(&self) -> ModelConfig {
        match self.kind {
            ModelKind::Transformer => ModelConfig::Transformer(self.transformer.clone()),
            ModelKind::Lstm => ModelConfig::Lstm(self.lstm.clone()),
        }
    }

    pub fn pipeline(&self) -> Result<PipelineConfig> {
        let cfg = PipelineConfig {
            model: self.model(),
            train: self.train,
            window: self.window,
            split: self.split,
            vocab_capacity: self.vocab_capacity,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
