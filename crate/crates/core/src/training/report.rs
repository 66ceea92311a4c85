use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    /// Mean contract-level cross-entropy; NaN when not computed.
    pub loss: f64,
    pub total: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    /// Builds the report from true and predicted class indices. Classes
    /// with no predicted positives get precision 0.
    pub fn from_predictions(
        labels: &[usize],
        predictions: &[usize],
        class_names: &[&str],
        loss: f64,
    ) -> Result<Self> {
        let c = class_names.len();
        if labels.len() != predictions.len() {
            return Err(Error::Shape(format!(
                "{} labels vs {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut confusion = vec![vec![0usize; c]; c];
        for (&t, &p) in labels.iter().zip(predictions) {
            if t >= c || p >= c {
                return Err(Error::LabelMismatch(format!("class index out of range for {c} classes")));
            }
            confusion[t][p] += 1;
        }
        let total = labels.len();
        let per_class: Vec<ClassMetrics> = (0..c)
            .map(|k| {
                let tp = confusion[k][k];
                let predicted: usize = (0..c).map(|t| confusion[t][k]).sum();
                let support: usize = confusion[k].iter().sum();
                ClassMetrics {
                    name: class_names[k].to_string(),
                    precision: ratio(tp, predicted),
                    recall: ratio(tp, support),
                    // 2pr/(p+r) written over the counts, so it is one rounding.
                    f1: ratio(2 * tp, predicted + support),
                    support,
                }
            })
            .collect();
        let trace: usize = (0..c).map(|k| confusion[k][k]).sum();
        let avg = |w: &dyn Fn(&ClassMetrics) -> f64| {
            let weights: Vec<f64> = per_class.iter().map(w).collect();
            let norm: f64 = weights.iter().sum();
            let mean = |f: fn(&ClassMetrics) -> f64| {
                if norm == 0.0 {
                    0.0
                } else {
                    per_class.iter().zip(&weights).map(|(m, w)| f(m) * w).sum::<f64>() / norm
                }
            };
            Averages {
                precision: mean(|m| m.precision),
                recall: mean(|m| m.recall),
                f1: mean(|m| m.f1),
            }
        };
        let report = Self {
            macro_avg: avg(&|_| 1.0),
            weighted_avg: avg(&|m| m.support as f64),
            confusion,
            per_class,
            accuracy: ratio(trace, total),
            loss,
            total,
        };
        debug_assert!(report.check().is_ok());
        Ok(report)
    }

    /// Row sums equal supports and accuracy equals trace over total.
    pub fn check(&self) -> Result<()> {
        let c = self.confusion.len();
        for (k, row) in self.confusion.iter().enumerate() {
            if row.iter().sum::<usize>() != self.per_class[k].support {
                return Err(Error::Shape(format!("row {k} does not sum to its support")));
            }
        }
        let trace: usize = (0..c).map(|k| self.confusion[k][k]).sum();
        if self.accuracy != ratio(trace, self.total) {
            return Err(Error::Shape("accuracy differs from trace / total".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .per_class
            .iter()
            .map(|m| m.name.len())
            .chain([12])
            .max()
            .unwrap_or(12);
        writeln!(
            f,
            "{:>width$} {:>9} {:>9} {:>9} {:>9}",
            "", "precision", "recall", "f1-score", "support"
        )?;
        writeln!(f)?;
        for m in &self.per_class {
            writeln!(
                f,
                "{:>width$} {:>9.2} {:>9.2} {:>9.2} {:>9}",
                m.name, m.precision, m.recall, m.f1, m.support
            )?;
        }
        writeln!(f)?;
        writeln!(f, "{:>width$} {:>9} {:>9} {:>9.2} {:>9}", "accuracy", "", "", self.accuracy, self.total)?;
        for (name, a) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted_avg)] {
            writeln!(
                f,
                "{:>width$} {:>9.2} {:>9.2} {:>9.2} {:>9}",
                name, a.precision, a.recall, a.f1, self.total
            )?;
        }
        if self.loss.is_finite() {
            writeln!(f, "\nloss {:.4}", self.loss)?;
        }
        writeln!(f, "\nconfusion matrix (rows true, columns predicted)")?;
        for (k, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|n| format!("{n:>7}")).collect();
            writeln!(f, "{:>width$} {}", self.per_class[k].name, cells.join(""))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_example() {
        let r = EvalReport::from_predictions(&[1, 0, 0, 0], &[1, 1, 0, 0], &["normal", "vulnerable"], f64::NAN)
            .unwrap();
        assert_eq!(r.confusion, [[2, 1], [0, 1]]);
        assert_eq!(r.per_class[1].precision, 0.5);
        assert_eq!(r.per_class[1].recall, 1.0);
        assert_eq!(r.per_class[0].support, 3);
        assert_eq!(r.accuracy, 0.75);
    }

    #[test]
    fn perfect_and_empty() {
        let r = EvalReport::from_predictions(&[0, 1, 2, 3], &[0, 1, 2, 3], &["a", "b", "c", "d"], 0.0).unwrap();
        for m in &r.per_class {
            assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(r.accuracy, 1.0);
        assert!(matches!(
            EvalReport::from_predictions(&[], &[], &["a", "b"], 0.0),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn never_predicted_class_has_zero_precision() {
        let r = EvalReport::from_predictions(&[0, 1], &[0, 0], &["a", "b"], 0.0).unwrap();
        assert_eq!(r.per_class[1].precision, 0.0);
        assert_eq!(r.per_class[1].f1, 0.0);
        let text = r.to_string();
        assert!(text.contains("precision") && text.contains("support"));
        assert!(r.to_json().contains("\"confusion\""));
    }
}
