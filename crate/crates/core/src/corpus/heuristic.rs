//! Syntactic stand-in for symbolic trace analysis. The rules look only at
//! opcode order and are intentionally conservative.

use super::VulnLabel;
use crate::disasm::{Instruction, OpcodeSequence};

const EQ: u8 = 0x14;
const CALLER: u8 = 0x33;
const CALLVALUE: u8 = 0x34;
const CALL: u8 = 0xf1;
const DELEGATECALL: u8 = 0xf4;
const SELFDESTRUCT: u8 = 0xff;

/// True when some CALLER is followed by an EQ before index `end`.
fn guarded(ins: &[Instruction], end: usize) -> bool {
    match ins[..end].iter().position(|i| i.opcode_byte == CALLER) {
        Some(c) => ins[c + 1..end].iter().any(|i| i.opcode_byte == EQ),
        None => false,
    }
}

fn is_push(i: &Instruction) -> bool {
    (0x60..=0x7f).contains(&i.opcode_byte)
}

/// Labels a contract by a rule cascade:
///
/// 1. Suicidal: a SELFDESTRUCT not preceded by a CALLER ... EQ check.
/// 2. Prodigal: a CALL whose value argument is pushed as a nonzero literal
///    (the PUSH three instructions before the CALL, under the usual
///    `value, address, gas` push order) with no CALLER ... EQ check before it.
/// 3. Greedy: CALLVALUE present but no CALL, DELEGATECALL or SELFDESTRUCT.
/// 4. Normal otherwise.
pub fn heuristic_label(seq: &OpcodeSequence) -> VulnLabel {
    let ins = &seq.instructions;
    if let Some(sd) = ins.iter().position(|i| i.opcode_byte == SELFDESTRUCT) {
        if !guarded(ins, sd) {
            return VulnLabel::Suicidal;
        }
    }
    for (k, i) in ins.iter().enumerate() {
        if i.opcode_byte == CALL && k >= 3 {
            let value = &ins[k - 3];
            if is_push(value) && value.immediate.iter().any(|&b| b != 0) && !guarded(ins, k) {
                return VulnLabel::Prodigal;
            }
        }
    }
    let has = |op: u8| ins.iter().any(|i| i.opcode_byte == op);
    if has(CALLVALUE) && !has(CALL) && !has(DELEGATECALL) && !has(SELFDESTRUCT) {
        return VulnLabel::Greedy;
    }
    VulnLabel::Normal
}
