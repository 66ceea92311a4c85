//! Sliding-window chunking of long contracts and aggregation of the
//! per-window predictions.
//!
//! Windows start on a fixed stride grid `0, s, 2s, …` with
//! `s = floor(window_size × (1 − overlap))`, and enough windows are taken
//! that the last one reaches the end of the contract. Only the final window
//! may be tail-padded with PAD ids.
//!
//! ```
//! use evmscan::window::{make_windows, WindowConfig};
//!
//! let ids = vec![7; 3000];
//! let batch = make_windows(&ids, &WindowConfig::default()).unwrap();
//! let starts: Vec<usize> = batch.windows.iter().map(|w| w.start).collect();
//! assert_eq!(starts, [0, 1536]);
//! ```

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tokenizer::PAD;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Max,
    Mean,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Max => "max",
            Aggregation::Mean => "mean",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "max" => Ok(Aggregation::Max),
            "mean" => Ok(Aggregation::Mean),
            other => Err(Error::Config(format!("unknown aggregation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowConfig {
    pub window_size: usize,
    pub overlap: f64,
    pub aggregation: Aggregation,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_size: 2048,
            overlap: 0.25,
            aggregation: Aggregation::Max,
        }
    }
}

impl WindowConfig {
    pub fn new(window_size: usize, overlap: f64, aggregation: Aggregation) -> Result<Self> {
        let cfg = Self {
            window_size,
            overlap,
            aggregation,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn stride(&self) -> usize {
        (self.window_size as f64 * (1.0 - self.overlap)).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 {
            return Err(Error::Config("window_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config(format!(
                "overlap {} outside [0, 1)",
                self.overlap
            )));
        }
        if self.stride() == 0 {
            return Err(Error::Config(format!(
                "window_size {} with overlap {} gives a zero stride",
                self.window_size, self.overlap
            )));
        }
        Ok(())
    }

    /// Window start offsets for a contract of `len` tokens.
    pub fn starts(&self, len: usize) -> Vec<usize> {
        let stride = self.stride();
        let mut starts = vec![0];
        while starts.last().unwrap() + self.window_size < len {
            starts.push(starts.last().unwrap() + stride);
        }
        starts
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    /// Exactly `window_size` ids, PAD-filled at the tail.
    pub ids: Vec<usize>,
    /// `true` at padded positions.
    pub pad_mask: Vec<bool>,
}

impl Window {
    /// Number of real (non-padding) tokens.
    pub fn real_len(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| !m).count()
    }

    /// Ids with tail padding removed.
    pub fn tokens(&self) -> &[usize] {
        &self.ids[..self.real_len()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WindowBatch {
    pub address: String,
    pub windows: Vec<Window>,
}

pub fn make_windows(ids: &[usize], cfg: &WindowConfig) -> Result<WindowBatch> {
    if ids.is_empty() {
        return Err(Error::EmptyContract);
    }
    cfg.validate()?;
    let windows = cfg
        .starts(ids.len())
        .into_iter()
        .map(|start| {
            let end = (start + cfg.window_size).min(ids.len());
            let mut w = ids[start..end].to_vec();
            let real = w.len();
            w.resize(cfg.window_size, PAD);
            let pad_mask = (0..cfg.window_size).map(|i| i >= real).collect();
            Window {
                start,
                ids: w,
                pad_mask,
            }
        })
        .collect();
    Ok(WindowBatch {
        address: String::new(),
        windows,
    })
}

/// Combines per-window class-probability vectors into one contract-level
/// vector. `Max` takes the elementwise maximum and renormalizes; `Mean`
/// averages.
pub fn aggregate(per_window: &[Vec<f64>], strategy: Aggregation) -> Result<Vec<f64>> {
    let first = per_window.first().ok_or(Error::EmptyBatch)?;
    let width = first.len();
    if per_window.iter().any(|p| p.len() != width) {
        return Err(Error::Shape("per-window probability widths differ".into()));
    }
    match strategy {
        Aggregation::Max => {
            let mut out = first.clone();
            for p in &per_window[1..] {
                for (o, v) in out.iter_mut().zip(p) {
                    *o = o.max(*v);
                }
            }
            if width > 1 {
                let total: f64 = out.iter().sum();
                if total > 0.0 {
                    out.iter_mut().for_each(|v| *v /= total);
                }
            }
            Ok(out)
        }
        Aggregation::Mean => {
            let n = per_window.len() as f64;
            let mut out = vec![0.0; width];
            for p in per_window {
                for (o, v) in out.iter_mut().zip(p) {
                    *o += v;
                }
            }
            out.iter_mut().for_each(|v| *v /= n);
            Ok(out)
        }
    }
}

/// Index of the largest entry (first on ties).
pub fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}
