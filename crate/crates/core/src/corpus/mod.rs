//! Labeled contract corpora: the one-hot label format, dataset CSV files,
//! API ingestion, preprocessing, heuristic labeling and synthesis.
//!
//! A dataset row has three columns: the contract address, its hex tokens
//! separated by single spaces, and the label as four space-separated bits.
//!
//! ```text
//! 0x0087…,60 80 60 40 52 …,0 0 0 1
//! ```

pub mod api;
mod heuristic;
mod preprocess;
mod synth;

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

pub use heuristic::heuristic_label;
pub use preprocess::{dedup, filter_and_balance, stats, BalancePolicy, DatasetStats};
pub use synth::{synthesize_corpus, SynthConfig};

/// The four trace-vulnerability classes, in one-hot bit order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum VulnLabel {
    Normal,
    Suicidal,
    Prodigal,
    Greedy,
}

impl VulnLabel {
    pub const ALL: [VulnLabel; 4] = [
        VulnLabel::Normal,
        VulnLabel::Suicidal,
        VulnLabel::Prodigal,
        VulnLabel::Greedy,
    ];

    /// Position of the set bit.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_vulnerable(self) -> bool {
        self != VulnLabel::Normal
    }

    /// Class index under a 2- or 4-class taxonomy.
    pub fn class(self, num_classes: usize) -> usize {
        if num_classes == 2 {
            self.is_vulnerable() as usize
        } else {
            self.index()
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            VulnLabel::Normal => "normal",
            VulnLabel::Suicidal => "suicidal",
            VulnLabel::Prodigal => "prodigal",
            VulnLabel::Greedy => "greedy",
        }
    }

    /// The four-bit form, e.g. `"0 0 0 1"` for greedy.
    pub fn render(self) -> String {
        RawLabel::from(self).to_string()
    }
}

impl fmt::Display for VulnLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VulnLabel {
    type Err = Error;

    /// Accepts the four-bit form.
    fn from_str(s: &str) -> Result<Self> {
        parse_label(s)
    }
}

/// Class names for report rows.
pub fn class_names(num_classes: usize) -> Vec<&'static str> {
    if num_classes == 2 {
        vec!["normal", "vulnerable"]
    } else {
        VulnLabel::ALL.iter().map(|l| l.name()).collect()
    }
}

/// Four label bits as they appear in raw tool output, possibly with
/// several flags set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RawLabel(pub [bool; 4]);

impl RawLabel {
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(Error::MalformedLabel(text.to_string()));
        }
        let mut bits = [false; 4];
        for (b, p) in bits.iter_mut().zip(&parts) {
            *b = match *p {
                "0" => false,
                "1" => true,
                _ => return Err(Error::MalformedLabel(text.to_string())),
            };
        }
        Ok(RawLabel(bits))
    }

    /// The class when exactly one bit is set.
    pub fn one_hot(self) -> Option<VulnLabel> {
        let mut set = self.0.iter().enumerate().filter(|(_, &b)| b);
        match (set.next(), set.next()) {
            (Some((i, _)), None) => VulnLabel::from_index(i),
            _ => None,
        }
    }
}

impl From<VulnLabel> for RawLabel {
    fn from(l: VulnLabel) -> Self {
        let mut bits = [false; 4];
        bits[l.index()] = true;
        RawLabel(bits)
    }
}

impl fmt::Display for RawLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, b) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(if *b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Parses a one-hot label such as `"1 0 0 0"`.
pub fn parse_label(text: &str) -> Result<VulnLabel> {
    RawLabel::parse(text)?
        .one_hot()
        .ok_or_else(|| Error::MalformedLabel(text.to_string()))
}

pub fn render_label(label: VulnLabel) -> String {
    label.render()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractRecord {
    pub address: String,
    pub hex_tokens: Vec<String>,
    pub label: VulnLabel,
    pub source: Option<String>,
}

/// A dataset row before exclusion rules, carrying the raw label bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub address: String,
    pub hex_tokens: Vec<String>,
    pub label: RawLabel,
}

/// `0x` followed by exactly 40 hex digits.
pub fn is_valid_address(s: &str) -> bool {
    s.strip_prefix("0x")
        .is_some_and(|h| h.len() == 40 && h.bytes().all(|b| b.is_ascii_hexdigit()))
}

fn parse_tokens(text: &str) -> std::result::Result<Vec<String>, String> {
    text.split_whitespace()
        .map(|t| {
            if t.len() == 2 && t.bytes().all(|b| b.is_ascii_hexdigit()) {
                Ok(t.to_ascii_lowercase())
            } else {
                Err(format!("bad hex token {t:?}"))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CsvOptions {
    /// The first row is a header.
    pub has_header: bool,
    /// Collect malformed rows instead of failing on the first one.
    pub skip_malformed: bool,
}

/// Rows read from a dataset file, plus the rows that were skipped.
#[derive(Debug, Default)]
pub struct CsvLoad<T> {
    pub records: Vec<T>,
    pub skipped: Vec<Error>,
}

fn read_rows<R: Read, T>(
    reader: R,
    opts: CsvOptions,
    mut parse: impl FnMut(&str, Vec<String>, &str) -> std::result::Result<T, String>,
) -> Result<CsvLoad<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .flexible(true)
        .from_reader(reader);
    let mut out = CsvLoad {
        records: Vec::new(),
        skipped: Vec::new(),
    };
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let parsed = if row.len() != 3 {
            Err(format!("expected 3 columns, found {}", row.len()))
        } else if !is_valid_address(row[0].trim()) {
            Err(format!("bad address {:?}", &row[0]))
        } else {
            parse_tokens(&row[1]).and_then(|toks| parse(row[0].trim(), toks, &row[2]))
        };
        match parsed {
            Ok(r) => out.records.push(r),
            Err(message) => {
                let err = Error::Row { line, message };
                if opts.skip_malformed {
                    out.skipped.push(err);
                } else {
                    return Err(err);
                }
            }
        }
    }
    Ok(out)
}

pub fn read_csv<R: Read>(reader: R, opts: CsvOptions) -> Result<CsvLoad<ContractRecord>> {
    read_rows(reader, opts, |address, hex_tokens, label| {
        let label = parse_label(label.trim()).map_err(|e| e.to_string())?;
        Ok(ContractRecord {
            address: address.to_string(),
            hex_tokens,
            label,
            source: None,
        })
    })
}

/// Like [`read_csv`] but accepts labels with any number of bits set.
pub fn read_raw_csv<R: Read>(reader: R, opts: CsvOptions) -> Result<CsvLoad<RawRecord>> {
    read_rows(reader, opts, |address, hex_tokens, label| {
        let label = RawLabel::parse(label.trim()).map_err(|e| e.to_string())?;
        Ok(RawRecord {
            address: address.to_string(),
            hex_tokens,
            label,
        })
    })
}

/// Loads a headerless dataset, failing on the first malformed row.
pub fn load_csv(path: &Path) -> Result<Vec<ContractRecord>> {
    Ok(load_csv_with(path, CsvOptions::default())?.records)
}

pub fn load_csv_with(path: &Path, opts: CsvOptions) -> Result<CsvLoad<ContractRecord>> {
    read_csv(std::fs::File::open(path)?, opts)
}

pub fn load_raw_csv(path: &Path, opts: CsvOptions) -> Result<CsvLoad<RawRecord>> {
    read_raw_csv(std::fs::File::open(path)?, opts)
}

pub fn write_csv_to<W: Write>(records: &[ContractRecord], writer: W, header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    if header {
        w.write_record(["address", "opcode", "label"])?;
    }
    for r in records {
        w.write_record([
            r.address.as_str(),
            r.hex_tokens.join(" ").as_str(),
            r.label.render().as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(records: &[ContractRecord], path: &Path) -> Result<()> {
    write_csv_with(records, path, false)
}

pub fn write_csv_with(records: &[ContractRecord], path: &Path, header: bool) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv_to(records, file, header)
}
