//! Hex-token vocabulary and integer encoding.
//!
//! Ids 0 and 1 are reserved for padding and out-of-vocabulary tokens.
//! Fitted tokens receive ids from 2 upward in order of descending corpus
//! frequency, ties broken lexicographically, so a fit is a pure function
//! of the corpus.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const OOV: usize = 1;
pub const PAD_TOKEN: &str = "<PAD>";
pub const OOV_TOKEN: &str = "<OOV>";

/// Default capacity: the 1000 × 128 embedding table of the reference
/// architecture.
pub const DEFAULT_CAPACITY: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    capacity: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from the most frequent tokens of `corpus`.
    pub fn fit<I, S>(corpus: I, capacity: usize) -> Result<Self>
    where
        I: IntoIterator,
        I::Item: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if capacity < 2 {
            return Err(Error::InvalidCapacity(capacity));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        for doc in corpus {
            for tok in doc {
                let tok = tok.as_ref();
                if let Some(c) = counts.get_mut(tok) {
                    *c += 1;
                } else {
                    counts.insert(tok.to_string(), 1);
                }
            }
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(capacity - 2);
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t), capacity)
    }

    /// Builds a vocabulary whose non-reserved ids follow `tokens` in order.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I, capacity: usize) -> Result<Self> {
        if capacity < 2 {
            return Err(Error::InvalidCapacity(capacity));
        }
        let mut id_to_token = vec![PAD_TOKEN.to_string(), OOV_TOKEN.to_string()];
        let mut token_to_id = HashMap::new();
        for tok in tokens {
            if tok == PAD_TOKEN || tok == OOV_TOKEN {
                return Err(Error::Config(format!("reserved token {tok} in vocabulary")));
            }
            if token_to_id.insert(tok.clone(), id_to_token.len()).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token {tok:?}")));
            }
            id_to_token.push(tok);
        }
        if id_to_token.len() > capacity {
            return Err(Error::Config(format!(
                "vocabulary of {} exceeds capacity {capacity}",
                id_to_token.len()
            )));
        }
        Ok(Self {
            token_to_id,
            id_to_token,
            capacity,
        })
    }

    /// Number of ids in use, reserved ids included.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.len() <= 2
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Fitted tokens in id order (reserved ids excluded).
    pub fn tokens(&self) -> &[String] {
        &self.id_to_token[2..]
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(OOV))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.token(id).map(str::to_string).ok_or(Error::UnknownId {
                    id,
                    size: self.len(),
                })
            })
            .collect()
    }

    /// `token<TAB>id` per line, sorted by id, reserved ids included.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, tok) in self.id_to_token.iter().enumerate() {
            let _ = writeln!(out, "{tok}\t{id}");
        }
        out
    }

    /// Parses the [`to_tsv`](Self::to_tsv) format, checking that ids are
    /// contiguous and the mapping is bijective.
    pub fn from_tsv(text: &str, capacity: usize) -> Result<Self> {
        let mut tokens = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line_no = lineno as u64 + 1;
            let row_err = |message: String| Error::Row {
                line: line_no,
                message,
            };
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| row_err("expected token<TAB>id".into()))?;
            let id: usize = id
                .trim()
                .parse()
                .map_err(|_| row_err(format!("bad id {id:?}")))?;
            if id != lineno {
                return Err(row_err(format!("expected id {lineno}, found {id}")));
            }
            let expected_reserved = match id {
                PAD => Some(PAD_TOKEN),
                OOV => Some(OOV_TOKEN),
                _ => None,
            };
            match expected_reserved {
                Some(r) if tok != r => {
                    return Err(row_err(format!("id {id} must be {r}")));
                }
                Some(_) => {}
                None => tokens.push(tok.to_string()),
            }
        }
        Self::from_tokens(tokens, capacity)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn load(path: &Path, capacity: usize) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path)?, capacity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Vocabulary {
        Vocabulary::fit([vec!["60", "80", "60"]], 1000).unwrap()
    }

    #[test]
    fn fit_ranks_by_frequency() {
        let v = small();
        assert_eq!(v.id("60"), Some(2));
        assert_eq!(v.id("80"), Some(3));
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn fit_breaks_ties_lexicographically() {
        let v = Vocabulary::fit([vec!["b", "a", "c", "c"]], 10).unwrap();
        assert_eq!(v.tokens(), ["c", "a", "b"]);
    }

    #[test]
    fn fit_respects_capacity() {
        let v = Vocabulary::fit([vec!["a", "a", "a", "b", "b", "c"]], 4).unwrap();
        assert_eq!(v.tokens(), ["a", "b"]);
        assert_eq!(v.encode(&["c"]), [OOV]);
    }

    #[test]
    fn empty_corpus() {
        let v = Vocabulary::fit(Vec::<Vec<String>>::new(), 1000).unwrap();
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn two_hundred_seventy_distinct() {
        let doc: Vec<String> = (0..270).map(|i| format!("t{i:03}")).collect();
        let v = Vocabulary::fit([doc], 1000).unwrap();
        assert_eq!(v.len(), 272);
    }

    #[test]
    fn invalid_capacity() {
        assert!(matches!(
            Vocabulary::fit([vec!["a"]], 1),
            Err(Error::InvalidCapacity(1))
        ));
    }

    #[test]
    fn encode_decode() {
        let v = small();
        assert_eq!(v.encode(&["60", "80", "60"]), [2, 3, 2]);
        assert_eq!(v.encode(&["zz"]), [1]);
        assert!(v.encode::<&str>(&[]).is_empty());
        assert_eq!(v.decode(&[2, 3]).unwrap(), ["60", "80"]);
        assert_eq!(v.decode(&[1]).unwrap(), [OOV_TOKEN]);
        assert_eq!(v.decode(&[0]).unwrap(), [PAD_TOKEN]);
        assert!(matches!(
            v.decode(&[9999]),
            Err(Error::UnknownId { id: 9999, .. })
        ));
    }

    #[test]
    fn tsv_roundtrip_and_validation() {
        let v = Vocabulary::fit([vec!["60", "80", "60", "52"]], 1000).unwrap();
        let text = v.to_tsv();
        assert!(text.starts_with("<PAD>\t0\n<OOV>\t1\n60\t2\n"));
        assert_eq!(Vocabulary::from_tsv(&text, 1000).unwrap(), v);

        let gap = "<PAD>\t0\n<OOV>\t1\n60\t3\n";
        assert!(Vocabulary::from_tsv(gap, 1000).is_err());
        let dup = "<PAD>\t0\n<OOV>\t1\n60\t2\n60\t3\n";
        assert!(Vocabulary::from_tsv(dup, 1000).is_err());
    }
}
