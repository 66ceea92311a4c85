//! Binary checkpoint container.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic      8 bytes  "EVMSCKPT"
//! version    u32      1
//! header     u32 length, then UTF-8 "key=value\n" lines
//!                     (model config, window config, vocabulary capacity)
//! vocabulary u32 count, then per token: u16 length + UTF-8 bytes,
//!                     in id order starting at id 2
//! tensors    u32 count, then per tensor: u16 name length, name,
//!                     u32 rank, rank × u64 dims, row-major f64 values
//! ```
//!
//! Loading checks tensor names and shapes against a freshly initialized
//! model of the stored configuration, so a checkpoint whose parameter
//! counts disagree with its config is rejected.

use std::io::{Cursor, Read};
use std::path::Path;

use super::{Model, ModelConfig, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tokenizer::Vocabulary;
use crate::window::WindowConfig;

const MAGIC: &[u8; 8] = b"EVMSCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Vocabulary,
    pub window: WindowConfig,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());

        let mut header = String::new();
        for (k, v) in self.model.config.to_fields() {
            header.push_str(&format!("{k}={v}\n"));
        }
        header.push_str(&format!("window_size={}\n", self.window.window_size));
        header.push_str(&format!("overlap={:?}\n", self.window.overlap));
        header.push_str(&format!("aggregation={}\n", self.window.aggregation));
        header.push_str(&format!("vocab_capacity={}\n", self.vocab.capacity()));
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());

        let tokens = self.vocab.tokens();
        out.extend_from_slice(&(tokens.len() as u32).to_le_bytes());
        for tok in tokens {
            out.extend_from_slice(&(tok.len() as u16).to_le_bytes());
            out.extend_from_slice(tok.as_bytes());
        }

        out.extend_from_slice(&(self.model.params.len() as u32).to_le_bytes());
        for (name, t) in self.model.params.iter() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| corrupt("truncated magic"))?;
        if &magic != MAGIC {
            return Err(corrupt("not a checkpoint (bad magic)"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }

        let header_len = read_u32(&mut r)? as usize;
        let header = read_string(&mut r, header_len)?;
        let fields: Vec<(String, String)> = header
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let field = |key: &str| -> Result<&str> {
            fields
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| corrupt(&format!("missing header field {key}")))
        };
        let config = ModelConfig::from_fields(&fields)?;
        let window = WindowConfig::new(
            field("window_size")?
                .parse()
                .map_err(|_| corrupt("bad window_size"))?,
            field("overlap")?.parse().map_err(|_| corrupt("bad overlap"))?,
            field("aggregation")?.parse()?,
        )?;
        let capacity: usize = field("vocab_capacity")?
            .parse()
            .map_err(|_| corrupt("bad vocab_capacity"))?;

        let n_tokens = read_u32(&mut r)? as usize;
        let mut tokens = Vec::with_capacity(n_tokens.min(1 << 16));
        for _ in 0..n_tokens {
            let len = read_u16(&mut r)? as usize;
            tokens.push(read_string(&mut r, len)?);
        }
        let vocab = Vocabulary::from_tokens(tokens, capacity)?;
        if vocab.len() > config.vocab_size() {
            return Err(corrupt(&format!(
                "vocabulary of {} exceeds model vocab_size {}",
                vocab.len(),
                config.vocab_size()
            )));
        }

        let expected = Model::init(config.clone(), 0)?.params;
        let n_tensors = read_u32(&mut r)? as usize;
        if n_tensors != expected.len() {
            return Err(corrupt(&format!(
                "{n_tensors} tensors, config expects {}",
                expected.len()
            )));
        }
        let mut params = ParamSet::new();
        for (want_name, want) in expected.iter() {
            let len = read_u16(&mut r)? as usize;
            let name = read_string(&mut r, len)?;
            if name != want_name {
                return Err(corrupt(&format!("expected tensor {want_name}, found {name}")));
            }
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(read_u64(&mut r)? as usize);
            }
            if shape != want.shape() {
                return Err(corrupt(&format!(
                    "tensor {name} has shape {shape:?}, config expects {:?}",
                    want.shape()
                )));
            }
            let mut data = Vec::with_capacity(want.len());
            for _ in 0..want.len() {
                data.push(f64::from_le_bytes(read_array(&mut r)?));
            }
            params.push(name, Tensor::new(shape, data)?);
        }
        if params.counts() != expected.counts() {
            return Err(corrupt("parameter counts disagree with config"));
        }
        if (r.position() as usize) != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self {
            model: Model { config, params },
            vocab,
            window,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint { message, .. } => Error::Checkpoint {
                path: path.to_path_buf(),
                message,
            },
            other => Error::Checkpoint {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })
    }
}

fn corrupt(message: &str) -> Error {
    Error::Checkpoint {
        path: Default::default(),
        message: message.to_string(),
    }
}

fn read_array<const N: usize>(r: &mut Cursor<&[u8]>) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|_| corrupt("truncated"))?;
    Ok(buf)
}

fn read_u16(r: &mut Cursor<&[u8]>) -> Result<u16> {
    Ok(u16::from_le_bytes(read_array(r)?))
}

fn read_u32(r: &mut Cursor<&[u8]>) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut Cursor<&[u8]>) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_string(r: &mut Cursor<&[u8]>, len: usize) -> Result<String> {
    let remaining = r.get_ref().len() - r.position() as usize;
    if len > remaining {
        return Err(corrupt("truncated string"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|_| corrupt("truncated"))?;
    String::from_utf8(buf).map_err(|_| corrupt("invalid UTF-8"))
}
