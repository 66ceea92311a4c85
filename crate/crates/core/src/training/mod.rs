//! Dataset splitting, mini-batch training and evaluation.
//!
//! Training runs on windows: every window of a contract inherits the
//! contract's label. Validation and evaluation are contract-level, after
//! aggregating the per-window probabilities.

mod adam;
mod report;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use report::{Averages, ClassMetrics, EvalReport};

use crate::autodiff::GradientSet;
use crate::corpus::{class_names, ContractRecord};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ParamSet};
use crate::tokenizer::Vocabulary;
use crate::window::{aggregate, argmax, make_windows, Window, WindowConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.68,
            val_fraction: 0.15,
        }
    }
}

impl SplitSpec {
    /// Partition sizes for `n` records: floor, floor, remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = (self.train_fraction * n as f64).floor() as usize;
        let val = (self.val_fraction * n as f64).floor() as usize;
        (train, val, n - train - val)
    }
}

/// Shuffles with `seed` and cuts into train, validation and test.
pub fn split<T: Clone>(records: &[T], spec: &SplitSpec, seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ok = |f: f64| (0.0..=1.0).contains(&f);
    if !ok(spec.train_fraction) || !ok(spec.val_fraction) || spec.train_fraction + spec.val_fraction >= 1.0 {
        return Err(Error::Config(format!(
            "split fractions {} + {} must be nonnegative and sum below 1",
            spec.train_fraction, spec.val_fraction
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b, _) = spec.sizes(records.len());
    let take = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<T>>();
    Ok((take(&order[..a]), take(&order[a..a + b]), take(&order[a + b..])))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// After the last epoch, restore the parameters of the epoch with the
    /// best validation accuracy (lower validation loss breaks ties, then
    /// the earlier epoch). Ignored without a validation set.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 50,
            seed: 0,
            adam: AdamConfig::default(),
            keep_best: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.adam.learning_rate.is_nan() || self.adam.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// A contract ready for the model: windows of token ids and a class index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub address: String,
    pub windows: Vec<Window>,
    pub class: usize,
}

pub fn encode_dataset(
    records: &[ContractRecord],
    vocab: &Vocabulary,
    window: &WindowConfig,
    num_classes: usize,
) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| {
            let ids = vocab.encode(&r.hex_tokens);
            Ok(Example {
                address: r.address.clone(),
                windows: make_windows(&ids, window)?.windows,
                class: r.label.class(num_classes),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Window-level, measured with dropout active during the epoch.
    pub train_loss: f64,
    pub train_acc: f64,
    /// Contract-level on the validation set; NaN without one.
    pub val_loss: f64,
    pub val_acc: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were kept, when `keep_best` chose one.
    pub restored_epoch: Option<usize>,
}

impl TrainHistory {
    /// Total optimizer steps taken.
    pub fn steps(&self) -> usize {
        self.epochs.iter().map(|e| e.steps).sum()
    }

    /// `epoch,train_loss,train_acc,val_loss,val_acc` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc
            );
        }
        out
    }
}

impl EpochStats {
    pub fn log_line(&self) -> String {
        format!(
            "epoch={} train_loss={:.6} train_acc={:.4} val_loss={:.6} val_acc={:.4}",
            self.epoch, self.train_loss, self.train_acc, self.val_loss, self.val_acc
        )
    }
}

/// SplitMix64 finalizer, used to derive independent per-window seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5eed, |acc, &p| mix(acc ^ mix(p)))
}

fn check_classes(model: &Model, data: &[Example]) -> Result<()> {
    let c = model.num_classes();
    if let Some(e) = data.iter().find(|e| e.class >= c) {
        return Err(Error::LabelMismatch(format!(
            "{} has class {} but the model has {c} classes",
            e.address, e.class
        )));
    }
    Ok(())
}

/// Trains `model` in place. `on_epoch` sees each epoch's statistics as
/// soon as they are computed.
pub fn train(
    model: &mut Model,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    window: &WindowConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainHistory> {
    cfg.validate()?;
    check_classes(model, train_set)?;
    check_classes(model, val_set)?;
    let items: Vec<(usize, usize)> = train_set
        .iter()
        .enumerate()
        .flat_map(|(i, e)| (0..e.windows.len()).map(move |w| (i, w)))
        .collect();
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut state = AdamState::default();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, f64, usize, ParamSet)> = None;
    for epoch in 1..=cfg.epochs {
        let mut order = items.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, epoch as u64])));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut steps = 0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc = GradientSet::new();
            for (k, &(i, w)) in batch.iter().enumerate() {
                let ex = &train_set[i];
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
                    cfg.seed,
                    epoch as u64,
                    b as u64,
                    k as u64,
                ]));
                let out = model.loss_and_grads(ex.windows[w].tokens(), ex.class, Some(&mut rng))?;
                loss_sum += out.loss;
                correct += (argmax(&out.probs) == ex.class) as usize;
                for (id, g) in out.grads {
                    match acc.get_mut(&id) {
                        Some(t) => t.add_assign(&g),
                        None => {
                            acc.insert(id, g);
                        }
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for g in acc.values_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            adam_step(&mut model.params, &acc, &mut state, &cfg.adam)?;
            steps += 1;
        }
        let (val_loss, val_acc) = if val_set.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let r = evaluate(model, val_set, window)?;
            (r.loss, r.accuracy)
        };
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_acc: correct as f64 / order.len() as f64,
            val_loss,
            val_acc,
            steps,
        };
        let better = match &best {
            _ if !cfg.keep_best || val_set.is_empty() => false,
            None => true,
            Some((acc, loss, _, _)) => val_acc > *acc || (val_acc == *acc && val_loss < *loss),
        };
        if better {
            best = Some((val_acc, val_loss, epoch, model.params.clone()));
        }
        on_epoch(&stats);
        history.epochs.push(stats);
    }
    if let Some((_, _, epoch, params)) = best {
        model.params = params;
        history.restored_epoch = Some(epoch);
    }
    Ok(history)
}

/// Aggregated class probabilities and per-window probabilities of one
/// contract, inference mode.
pub fn predict(model: &Model, windows: &[Window], window: &WindowConfig) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let per_window = windows
        .iter()
        .map(|w| model.forward(w.tokens(), None))
        .collect::<Result<Vec<_>>>()?;
    Ok((aggregate(&per_window, window.aggregation)?, per_window))
}

/// Contract-level evaluation: aggregate windows, take the argmax.
pub fn evaluate(model: &Model, data: &[Example], window: &WindowConfig) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_classes(model, data)?;
    let mut labels = Vec::with_capacity(data.len());
    let mut preds = Vec::with_capacity(data.len());
    let mut loss = 0.0;
    for ex in data {
        let (p, _) = predict(model, &ex.windows, window)?;
        loss -= p[ex.class].max(crate::autodiff::LOG_CLAMP).ln();
        labels.push(ex.class);
        preds.push(argmax(&p));
    }
    EvalReport::from_predictions(
        &labels,
        &preds,
        &class_names(model.num_classes()),
        loss / data.len() as f64,
    )
}

/// Everything a training run needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub window: WindowConfig,
    pub split: SplitSpec,
    pub vocab_capacity: usize,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.window.validate()?;
        if self.window.window_size > self.model.max_length() {
            return Err(Error::Config(format!(
                "window_size {} exceeds the model's max_length {}",
                self.window.window_size,
                self.model.max_length()
            )));
        }
        if self.vocab_capacity > self.model.vocab_size() {
            return Err(Error::Config(format!(
                "vocabulary capacity {} exceeds the model's vocab_size {}",
                self.vocab_capacity,
                self.model.vocab_size()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub vocab: Vocabulary,
    pub history: TrainHistory,
    /// Test-partition report, `None` when the test partition is empty.
    pub report: Option<EvalReport>,
    pub split_sizes: (usize, usize, usize),
}

fn require_two_classes(records: &[ContractRecord], num_classes: usize) -> Result<()> {
    let classes: BTreeSet<usize> = records.iter().map(|r| r.label.class(num_classes)).collect();
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if classes.len() < 2 {
        return Err(Error::DatasetDegenerate);
    }
    Ok(())
}

/// Split, fit the vocabulary on the training partition, train, and
/// evaluate on the test partition.
pub fn run_pipeline(
    records: &[ContractRecord],
    cfg: &PipelineConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let c = cfg.model.num_classes();
    require_two_classes(records, c)?;
    let (train_r, val_r, test_r) = split(records, &cfg.split, cfg.train.seed)?;
    let vocab = Vocabulary::fit(train_r.iter().map(|r| &r.hex_tokens), cfg.vocab_capacity)?;
    let enc = |rs: &[ContractRecord]| encode_dataset(rs, &vocab, &cfg.window, c);
    let (train_set, val_set, test_set) = (enc(&train_r)?, enc(&val_r)?, enc(&test_r)?);
    let mut model = Model::init(cfg.model.clone(), cfg.train.seed)?;
    let history = train(&mut model, &train_set, &val_set, &cfg.train, &cfg.window, on_epoch)?;
    let report = if test_set.is_empty() {
        None
    } else {
        Some(evaluate(&model, &test_set, &cfg.window)?)
    };
    Ok(TrainOutcome {
        model,
        vocab,
        history,
        report,
        split_sizes: (train_r.len(), val_r.len(), test_r.len()),
    })
}

/// A dataset together with the number of classes its labels are read in.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSet<'a> {
    pub records: &'a [ContractRecord],
    pub num_classes: usize,
}

/// Trains on all of `train_set` and evaluates on all of `test_set`.
pub fn cross_dataset_run(
    train_set: LabeledSet<'_>,
    test_set: LabeledSet<'_>,
    cfg: &PipelineConfig,
) -> Result<(TrainOutcome, EvalReport)> {
    if train_set.num_classes != test_set.num_classes || train_set.num_classes != cfg.model.num_classes() {
        return Err(Error::LabelMismatch(format!(
            "train has {} classes, test has {}, model has {}",
            train_set.num_classes,
            test_set.num_classes,
            cfg.model.num_classes()
        )));
    }
    cfg.validate()?;
    let c = train_set.num_classes;
    require_two_classes(train_set.records, c)?;
    if test_set.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let vocab = Vocabulary::fit(train_set.records.iter().map(|r| &r.hex_tokens), cfg.vocab_capacity)?;
    let train_x = encode_dataset(train_set.records, &vocab, &cfg.window, c)?;
    let test_x = encode_dataset(test_set.records, &vocab, &cfg.window, c)?;
    let mut model = Model::init(cfg.model.clone(), cfg.train.seed)?;
    let history = train(&mut model, &train_x, &[], &cfg.train, &cfg.window, |_| {})?;
    let report = evaluate(&model, &test_x, &cfg.window)?;
    let n = train_set.records.len();
    Ok((
        TrainOutcome {
            model,
            vocab,
            history,
            report: None,
            split_sizes: (n, 0, 0),
        },
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::VulnLabel;
    use crate::model::TransformerConfig;
    use proptest::prelude::*;

    #[test]
    fn split_sizes() {
        assert_eq!(SplitSpec::default().sizes(1915), (1302, 287, 326));
        assert_eq!(SplitSpec::default().sizes(10), (6, 1, 3));
        assert!(matches!(split::<u8>(&[], &SplitSpec::default(), 0), Err(Error::EmptyDataset)));
    }

    proptest! {
        #[test]
        fn split_partitions(n in 3usize..400, seed in any::<u64>()) {
            let items: Vec<usize> = (0..n).collect();
            let (a, b, c) = split(&items, &SplitSpec::default(), seed).unwrap();
            let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
            all.sort();
            prop_assert_eq!(all, items);
        }
    }

    fn tiny() -> ModelConfig {
        ModelConfig::Transformer(TransformerConfig {
            max_length: 16,
            embedding_dim: 8,
            num_heads: 2,
            head_size: 8,
            ff_dim: 16,
            vocab_size: 32,
            ..Default::default()
        })
    }

    fn examples(n: usize) -> Vec<Example> {
        let cfg = WindowConfig::new(16, 0.25, crate::window::Aggregation::Max).unwrap();
        (0..n)
            .map(|i| {
                let ids: Vec<usize> = (0..10).map(|j| 2 + (i + j) % 20).collect();
                Example {
                    address: format!("c{i}"),
                    windows: make_windows(&ids, &cfg).unwrap().windows,
                    class: i % 2,
                }
            })
            .collect()
    }

    #[test]
    fn step_count_and_determinism() {
        let data = examples(64);
        let cfg = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        let w = WindowConfig::new(16, 0.25, crate::window::Aggregation::Max).unwrap();
        let mut a = Model::init(tiny(), 1).unwrap();
        let h = train(&mut a, &data, &[], &cfg, &w, |_| {}).unwrap();
        assert_eq!(h.steps(), 2);
        assert!(h.epochs[0].val_loss.is_nan());
        let mut b = Model::init(tiny(), 1).unwrap();
        train(&mut b, &data, &[], &cfg, &w, |_| {}).unwrap();
        assert_eq!(a, b);

        let h = train(&mut b, &data[..33], &[], &cfg, &w, |_| {}).unwrap();
        assert_eq!(h.steps(), 2);
    }

    #[test]
    fn keep_best_restores_the_best_epoch() {
        let data = examples(24);
        let w = WindowConfig::new(16, 0.25, crate::window::Aggregation::Max).unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 4,
            keep_best: true,
            ..Default::default()
        };
        let mut m = Model::init(tiny(), 2).unwrap();
        let h = train(&mut m, &data[..16], &data[16..], &cfg, &w, |_| {}).unwrap();
        let kept = h.restored_epoch.unwrap();
        let best = h.epochs.iter().map(|e| e.val_acc).fold(0.0, f64::max);
        let e = &h.epochs[kept - 1];
        assert_eq!(e.val_acc, best);
        let r = evaluate(&m, &data[16..], &w).unwrap();
        assert_eq!((r.accuracy, r.loss), (e.val_acc, e.val_loss));

        // No validation set: nothing to select on.
        let mut m = Model::init(tiny(), 2).unwrap();
        let h = train(&mut m, &data, &[], &cfg, &w, |_| {}).unwrap();
        assert_eq!(h.restored_epoch, None);
    }

    #[test]
    fn degenerate_and_mismatch() {
        let rec = |label| ContractRecord {
            address: format!("0x{:040x}", 1),
            hex_tokens: vec!["60".into(); 4],
            label,
            source: None,
        };
        let cfg = PipelineConfig {
            model: tiny(),
            train: TrainConfig {
                epochs: 1,
                ..Default::default()
            },
            window: WindowConfig::new(16, 0.25, crate::window::Aggregation::Max).unwrap(),
            split: SplitSpec::default(),
            vocab_capacity: 32,
        };
        let same = vec![rec(VulnLabel::Normal); 4];
        assert!(matches!(run_pipeline(&same, &cfg, |_| {}), Err(Error::DatasetDegenerate)));
        let mixed = vec![rec(VulnLabel::Normal), rec(VulnLabel::Greedy)];
        let a = LabeledSet { records: &mixed, num_classes: 2 };
        let b = LabeledSet { records: &mixed, num_classes: 4 };
        assert!(matches!(cross_dataset_run(a, b, &cfg), Err(Error::LabelMismatch(_))));
    }
}
