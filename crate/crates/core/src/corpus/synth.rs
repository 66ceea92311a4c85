//! Seeded synthetic corpora with planted vulnerability motifs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ContractRecord, VulnLabel};
use crate::error::{Error, Result};

const PROLOGUE: [u8; 5] = [0x60, 0x80, 0x60, 0x40, 0x52];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Total token count per contract is drawn uniformly from this range.
    pub min_len: usize,
    pub max_len: usize,
    /// Classes planted in the vulnerable half, used round-robin.
    pub vulnerable: Vec<VulnLabel>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            min_len: 200,
            max_len: 3000,
            vulnerable: vec![VulnLabel::Greedy],
        }
    }
}

impl SynthConfig {
    /// Normal plus all three vulnerable classes.
    pub fn four_class() -> Self {
        Self {
            vulnerable: vec![VulnLabel::Suicidal, VulnLabel::Prodigal, VulnLabel::Greedy],
            ..Self::default()
        }
    }
}

/// Background bytes never produce CALLER, CALLVALUE or the 0xf0..=0xff
/// system opcodes, as opcodes or as push data, so no motif can appear by
/// accident.
fn allowed(b: u8) -> bool {
    b != 0x33 && b != 0x34 && b < 0xf0
}

fn background_byte(rng: &mut ChaCha8Rng) -> u8 {
    loop {
        let b: u8 = rng.gen();
        if allowed(b) {
            return b;
        }
    }
}

/// Random whole instructions totalling exactly `len` bytes.
fn background(rng: &mut ChaCha8Rng, len: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut left = len;
    while left > 0 {
        let mut op = background_byte(rng);
        if (0x60..=0x7f).contains(&op) && (op - 0x5f) as usize >= left {
            op = 0x5b; // JUMPDEST
        }
        let mut ins = vec![op];
        if (0x60..=0x7f).contains(&op) {
            for _ in 0..op - 0x5f {
                ins.push(background_byte(rng));
            }
        }
        left -= ins.len();
        out.push(ins);
    }
    out
}

fn motif(label: VulnLabel, rng: &mut ChaCha8Rng) -> Vec<u8> {
    match label {
        VulnLabel::Normal => Vec::new(),
        // PUSH1 0; SELFDESTRUCT
        VulnLabel::Suicidal => vec![0x60, 0x00, 0xff],
        // retLen, retOffset, argsLen, argsOffset, value 1, PUSH20 to, GAS, CALL
        VulnLabel::Prodigal => {
            let mut m = vec![0x60, 0x00, 0x60, 0x00, 0x60, 0x00, 0x60, 0x00, 0x60, 0x01, 0x73];
            m.extend((0..20).map(|_| background_byte(rng)));
            m.extend([0x5a, 0xf1]);
            m
        }
        // CALLVALUE; DUP1; ISZERO
        VulnLabel::Greedy => vec![0x34, 0x80, 0x15],
    }
}

fn address(rng: &mut ChaCha8Rng) -> String {
    let bytes: [u8; 20] = rng.gen();
    let mut s = String::from("0x");
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// `n` contracts, half Normal (rounded up) and half vulnerable, shuffled.
pub fn synthesize_corpus(n: usize, cfg: &SynthConfig, seed: u64) -> Result<Vec<ContractRecord>> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 contracts, got {n}")));
    }
    if cfg.vulnerable.is_empty() || cfg.vulnerable.contains(&VulnLabel::Normal) {
        return Err(Error::Config("vulnerable classes must be nonempty and exclude normal".into()));
    }
    let longest_motif = 33;
    if cfg.min_len > cfg.max_len || cfg.min_len < PROLOGUE.len() + longest_motif + 1 {
        return Err(Error::Config(format!(
            "length range {}..={} too short or empty",
            cfg.min_len, cfg.max_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normals = n.div_ceil(2);
    let mut labels: Vec<VulnLabel> = vec![VulnLabel::Normal; normals];
    labels.extend((0..n - normals).map(|i| cfg.vulnerable[i % cfg.vulnerable.len()]));
    labels.shuffle(&mut rng);

    Ok(labels
        .into_iter()
        .map(|label| {
            let total = rng.gen_range(cfg.min_len..=cfg.max_len);
            let planted = motif(label, &mut rng);
            let mut body = background(&mut rng, total - PROLOGUE.len() - planted.len());
            let at = rng.gen_range(0..=body.len());
            body.insert(at, planted);
            let bytes: Vec<u8> = PROLOGUE.iter().copied().chain(body.into_iter().flatten()).collect();
            ContractRecord {
                address: address(&mut rng),
                hex_tokens: bytes.iter().map(|b| format!("{b:02x}")).collect(),
                label,
                source: Some("synthetic".into()),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::heuristic_label;
    use crate::disasm::{disassemble, parse_hex};

    fn relabel(r: &ContractRecord) -> VulnLabel {
        heuristic_label(&disassemble(&parse_hex(&r.hex_tokens.concat()).unwrap()))
    }

    #[test]
    fn balanced_and_deterministic() {
        let a = synthesize_corpus(10, &SynthConfig::default(), 3).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a.iter().filter(|r| r.label == VulnLabel::Normal).count(), 5);
        assert_eq!(a, synthesize_corpus(10, &SynthConfig::default(), 3).unwrap());
        assert_ne!(a, synthesize_corpus(10, &SynthConfig::default(), 4).unwrap());
        for r in &a {
            assert!((200..=3000).contains(&r.hex_tokens.len()));
            assert_eq!(r.hex_tokens[..5], ["60", "80", "60", "40", "52"]);
        }
    }

    #[test]
    fn heuristic_recovers_planted_labels() {
        for (cfg, seed) in [(SynthConfig::default(), 0), (SynthConfig::four_class(), 1)] {
            for r in synthesize_corpus(200, &cfg, seed).unwrap() {
                assert_eq!(relabel(&r), r.label, "{}", r.address);
            }
        }
    }

    #[test]
    fn rejects_bad_requests() {
        assert!(synthesize_corpus(1, &SynthConfig::default(), 0).is_err());
        let cfg = SynthConfig {
            vulnerable: vec![],
            ..SynthConfig::default()
        };
        assert!(synthesize_corpus(4, &cfg, 0).is_err());
    }
}
