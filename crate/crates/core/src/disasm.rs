//! EVM bytecode decoding.
//!
//! Raw hex text is decoded into a [`Bytecode`], which can then be rendered
//! either as the per-byte hex token stream consumed by the classifiers
//! ([`to_hex_tokens`]) or as a human-readable instruction listing
//! ([`disassemble`]).
//!
//! The opcode table is a snapshot of the Cancun instruction set (149
//! assigned bytes). Bytes outside the table decode as `INVALID`, and a
//! `PUSHn` that runs past the end of the code is zero-padded and flagged
//! as truncated, so decoding never fails on real-world deployed code.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// `(byte, mnemonic)` for every assigned opcode except `PUSH1..PUSH32`,
/// which are generated.
const OPCODES: &[(u8, &str)] = &[
    (0x00, "STOP"),
    (0x01, "ADD"),
    (0x02, "MUL"),
    (0x03, "SUB"),
    (0x04, "DIV"),
    (0x05, "SDIV"),
    (0x06, "MOD"),
    (0x07, "SMOD"),
    (0x08, "ADDMOD"),
    (0x09, "MULMOD"),
    (0x0a, "EXP"),
    (0x0b, "SIGNEXTEND"),
    (0x10, "LT"),
    (0x11, "GT"),
    (0x12, "SLT"),
    (0x13, "SGT"),
    (0x14, "EQ"),
    (0x15, "ISZERO"),
    (0x16, "AND"),
    (0x17, "OR"),
    (0x18, "XOR"),
    (0x19, "NOT"),
    (0x1a, "BYTE"),
    (0x1b, "SHL"),
    (0x1c, "SHR"),
    (0x1d, "SAR"),
    (0x20, "KECCAK256"),
    (0x30, "ADDRESS"),
    (0x31, "BALANCE"),
    (0x32, "ORIGIN"),
    (0x33, "CALLER"),
    (0x34, "CALLVALUE"),
    (0x35, "CALLDATALOAD"),
    (0x36, "CALLDATASIZE"),
    (0x37, "CALLDATACOPY"),
    (0x38, "CODESIZE"),
    (0x39, "CODECOPY"),
    (0x3a, "GASPRICE"),
    (0x3b, "EXTCODESIZE"),
    (0x3c, "EXTCODECOPY"),
    (0x3d, "RETURNDATASIZE"),
    (0x3e, "RETURNDATACOPY"),
    (0x3f, "EXTCODEHASH"),
    (0x40, "BLOCKHASH"),
    (0x41, "COINBASE"),
    (0x42, "TIMESTAMP"),
    (0x43, "NUMBER"),
    (0x44, "PREVRANDAO"),
    (0x45, "GASLIMIT"),
    (0x46, "CHAINID"),
    (0x47, "SELFBALANCE"),
    (0x48, "BASEFEE"),
    (0x49, "BLOBHASH"),
    (0x4a, "BLOBBASEFEE"),
    (0x50, "POP"),
    (0x51, "MLOAD"),
    (0x52, "MSTORE"),
    (0x53, "MSTORE8"),
    (0x54, "SLOAD"),
    (0x55, "SSTORE"),
    (0x56, "JUMP"),
    (0x57, "JUMPI"),
    (0x58, "PC"),
    (0x59, "MSIZE"),
    (0x5a, "GAS"),
    (0x5b, "JUMPDEST"),
    (0x5c, "TLOAD"),
    (0x5d, "TSTORE"),
    (0x5e, "MCOPY"),
    (0x5f, "PUSH0"),
    (0xa0, "LOG0"),
    (0xa1, "LOG1"),
    (0xa2, "LOG2"),
    (0xa3, "LOG3"),
    (0xa4, "LOG4"),
    (0xf0, "CREATE"),
    (0xf1, "CALL"),
    (0xf2, "CALLCODE"),
    (0xf3, "RETURN"),
    (0xf4, "DELEGATECALL"),
    (0xf5, "CREATE2"),
    (0xfa, "STATICCALL"),
    (0xfd, "REVERT"),
    (0xfe, "INVALID"),
    (0xff, "SELFDESTRUCT"),
];

pub const PUSH1: u8 = 0x60;
pub const PUSH32: u8 = 0x7f;

/// Static per-byte view of the opcode table: mnemonic (if assigned) and
/// immediate width.
struct OpInfo {
    mnemonic: Option<String>,
    immediate: usize,
}

fn op_table() -> &'static [OpInfo; 256] {
    static TABLE: std::sync::OnceLock<[OpInfo; 256]> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table: [OpInfo; 256] = std::array::from_fn(|_| OpInfo {
            mnemonic: None,
            immediate: 0,
        });
        for &(byte, name) in OPCODES {
            table[byte as usize].mnemonic = Some(name.to_string());
        }
        for n in 1..=32u8 {
            let byte = PUSH1 + n - 1;
            table[byte as usize] = OpInfo {
                mnemonic: Some(format!("PUSH{n}")),
                immediate: n as usize,
            };
        }
        for n in 1..=16u8 {
            table[0x80 + n as usize - 1].mnemonic = Some(format!("DUP{n}"));
            table[0x90 + n as usize - 1].mnemonic = Some(format!("SWAP{n}"));
        }
        table
    })
}

/// The assigned opcode table, byte to mnemonic. Unassigned bytes are absent.
pub fn mnemonic_table() -> BTreeMap<u8, &'static str> {
    op_table()
        .iter()
        .enumerate()
        .filter_map(|(b, info)| info.mnemonic.as_deref().map(|m| (b as u8, m)))
        .collect()
}

/// Mnemonic for a single byte; unassigned bytes render as `INVALID`.
pub fn mnemonic(byte: u8) -> &'static str {
    op_table()[byte as usize].mnemonic.as_deref().unwrap_or("INVALID")
}

/// Number of immediate bytes following `byte` (non-zero only for PUSH1..PUSH32).
pub fn immediate_width(byte: u8) -> usize {
    op_table()[byte as usize].immediate
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bytecode {
    pub bytes: Vec<u8>,
    pub source_hex: Option<String>,
}

impl Bytecode {
    pub fn new(bytes: Vec<u8>) -> Self {
        Self {
            bytes,
            source_hex: None,
        }
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

impl From<Vec<u8>> for Bytecode {
    fn from(bytes: Vec<u8>) -> Self {
        Self::new(bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub offset: usize,
    pub opcode_byte: u8,
    pub mnemonic: &'static str,
    /// Always `n` bytes for `PUSHn`, empty otherwise.
    pub immediate: Vec<u8>,
    /// The immediate ran past the end of the code and was zero-padded.
    pub truncated: bool,
}

impl Instruction {
    /// Bytes this instruction occupies in the code (the padded tail of a
    /// truncated PUSH is not counted).
    pub fn encoded_len(&self) -> usize {
        1 + self.immediate.len()
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04x}: {}", self.offset, self.mnemonic)?;
        if !self.immediate.is_empty() {
            f.write_str(" 0x")?;
            for b in &self.immediate {
                write!(f, "{b:02x}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpcodeSequence {
    pub instructions: Vec<Instruction>,
    pub code_length: usize,
}

impl OpcodeSequence {
    /// One instruction per line: `OFFSET: MNEMONIC [0xIMMEDIATE]`.
    pub fn listing(&self) -> String {
        let mut out = String::new();
        for ins in &self.instructions {
            out.push_str(&ins.to_string());
            out.push('\n');
        }
        out
    }

    pub fn opcodes(&self) -> impl Iterator<Item = u8> + '_ {
        self.instructions.iter().map(|i| i.opcode_byte)
    }
}

/// Decodes hex text into bytes. A leading `0x`/`0X` and any whitespace
/// are ignored. Digit offsets in errors count hex digits after stripping.
pub fn parse_hex(text: &str) -> Result<Bytecode> {
    let trimmed = text.trim_start();
    let body = trimmed
        .strip_prefix("0x")
        .or_else(|| trimmed.strip_prefix("0X"))
        .unwrap_or(trimmed);

    let mut digits = Vec::with_capacity(body.len());
    for (offset, c) in body.chars().filter(|c| !c.is_whitespace()).enumerate() {
        match c.to_ascii_lowercase().to_digit(16) {
            Some(d) => digits.push(d as u8),
            None => {
                return Err(Error::MalformedHex {
                    offset,
                    reason: "non-hex character",
                })
            }
        }
    }
    if digits.len() % 2 != 0 {
        return Err(Error::MalformedHex {
            offset: digits.len(),
            reason: "odd number of hex digits",
        });
    }
    let bytes = digits.chunks_exact(2).map(|p| (p[0] << 4) | p[1]).collect();
    Ok(Bytecode {
        bytes,
        source_hex: Some(text.to_string()),
    })
}

/// Decodes the instruction stream. Total: never fails.
pub fn disassemble(code: &Bytecode) -> OpcodeSequence {
    let bytes = &code.bytes;
    let mut instructions = Vec::new();
    let mut pc = 0;
    while pc < bytes.len() {
        let op = bytes[pc];
        let width = immediate_width(op);
        let start = pc + 1;
        let end = (start + width).min(bytes.len());
        let mut immediate = bytes[start..end].to_vec();
        let truncated = immediate.len() < width;
        immediate.resize(width, 0);
        instructions.push(Instruction {
            offset: pc,
            opcode_byte: op,
            mnemonic: mnemonic(op),
            immediate,
            truncated,
        });
        pc = start + width;
    }
    OpcodeSequence {
        instructions,
        code_length: bytes.len(),
    }
}

/// Two lowercase hex digits per byte, no `0x` prefix.
pub fn to_hex_tokens(code: &Bytecode) -> Vec<String> {
    code.bytes.iter().map(|b| format!("{b:02x}")).collect()
}
