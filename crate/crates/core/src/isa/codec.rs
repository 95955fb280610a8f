// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! Fixed-width 128-bit instruction words.
//!
//! Bit layout, msb first. Unlisted bits are reserved and must be zero.
//!
//! ```text
//! all          [127:120] opcode
//! pulse        [119:104] dest_channel  [103:72] time  [71:0] pulse command
//! alu          [119:112] fn  [111:104] lhs  [103:96] rhs kind (0 reg, 1 imm)
//!              [95:64] rhs  [63:56] dst kind (0 reg, 1 qclk, 2 ip)  [55:48] dst reg
//! bralu        fn/lhs/rhs as alu, [47:16] target
//! jump         [47:16] target
//! rdfproc      [119:104] fproc_id  [55:48] dst reg
//! brfproc      [119:104] fproc_id  [95:64] compare value  [47:16] target
//! sync         [119:112] barrier_id  [111:48] core mask
//! halt         -
//! ```

use super::{AluDst, AluFn, Instruction, IsaError, Operand, PulseCommand};

pub const OP_PULSE: u8 = 0x01;
pub const OP_ALU: u8 = 0x02;
pub const OP_JUMP: u8 = 0x03;
pub const OP_BRANCH_ALU: u8 = 0x04;
pub const OP_READ_FPROC: u8 = 0x05;
pub const OP_BRANCH_FPROC: u8 = 0x06;
pub const OP_SYNC: u8 = 0x07;
pub const OP_HALT: u8 = 0x08;

const RHS_REG: u8 = 0;
const RHS_IMM: u8 = 1;
const DST_REG: u8 = 0;
const DST_QCLK: u8 = 1;
const DST_IP: u8 = 2;

#[inline]
fn put(word: &mut u128, value: u128, lsb: u32) {
    *word |= value << lsb;
}

#[inline]
fn get(word: u128, lsb: u32, width: u32) -> u128 {
    (word >> lsb) & ((1u128 << width) - 1)
}

fn encode_operand(word: &mut u128, rhs: Operand) {
    match rhs {
        Operand::Reg(r) => {
            put(word, RHS_REG as u128, 96);
            put(word, r as u128, 64);
        }
        Operand::Imm(v) => {
            put(word, RHS_IMM as u128, 96);
            put(word, v as u32 as u128, 64);
        }
    }
}

pub fn encode_instruction(instr: &Instruction) -> Result<u128, IsaError> {
    instr.validate()?;
    let mut w = 0u128;
    match *instr {
        Instruction::Pulse {
            time,
            dest_channel,
            cmd,
        } => {
            put(&mut w, OP_PULSE as u128, 120);
            put(&mut w, dest_channel as u128, 104);
            put(&mut w, time as u128, 72);
            w |= cmd.pack()?;
        }
        Instruction::Alu { op, lhs, rhs, dst } => {
            put(&mut w, OP_ALU as u128, 120);
            put(&mut w, op.code() as u128, 112);
            put(&mut w, lhs as u128, 104);
            encode_operand(&mut w, rhs);
            match dst {
                AluDst::Reg(r) => {
                    put(&mut w, DST_REG as u128, 56);
                    put(&mut w, r as u128, 48);
                }
                AluDst::QclkIncrement => put(&mut w, DST_QCLK as u128, 56),
                AluDst::InstructionPointer => put(&mut w, DST_IP as u128, 56),
            }
        }
        Instruction::Jump { target } => {
            put(&mut w, OP_JUMP as u128, 120);
            put(&mut w, target as u128, 16);
        }
        Instruction::BranchAlu {
            op,
            lhs,
            rhs,
            target,
        } => {
            put(&mut w, OP_BRANCH_ALU as u128, 120);
            put(&mut w, op.code() as u128, 112);
            put(&mut w, lhs as u128, 104);
            encode_operand(&mut w, rhs);
            put(&mut w, target as u128, 16);
        }
        Instruction::ReadFproc { fproc_id, dst } => {
            put(&mut w, OP_READ_FPROC as u128, 120);
            put(&mut w, fproc_id as u128, 104);
            put(&mut w, dst as u128, 48);
        }
        Instruction::BranchFproc {
            fproc_id,
            compare_value,
            target,
        } => {
            put(&mut w, OP_BRANCH_FPROC as u128, 120);
            put(&mut w, fproc_id as u128, 104);
            put(&mut w, compare_value as u32 as u128, 64);
            put(&mut w, target as u128, 16);
        }
        Instruction::Sync {
            barrier_id,
            core_mask,
        } => {
            put(&mut w, OP_SYNC as u128, 120);
            put(&mut w, barrier_id as u128, 112);
            put(&mut w, core_mask as u128, 48);
        }
        Instruction::Halt => put(&mut w, OP_HALT as u128, 120),
    }
    Ok(w)
}

fn decode_alu_fn(opcode: u8, word: u128) -> Result<AluFn, IsaError> {
    let code = get(word, 112, 8) as u8;
    AluFn::from_code(code).ok_or(IsaError::InvalidField {
        opcode,
        field: "fn",
        value: code as u64,
    })
}

fn decode_operand(opcode: u8, word: u128) -> Result<Operand, IsaError> {
    let raw = get(word, 64, 32) as u32;
    match get(word, 96, 8) as u8 {
        RHS_REG => Ok(Operand::Reg(raw.min(u8::MAX as u32) as u8)),
        RHS_IMM => Ok(Operand::Imm(raw as i32)),
        kind => Err(IsaError::InvalidField {
            opcode,
            field: "rhs kind",
            value: kind as u64,
        }),
    }
}

fn decode_fields(opcode: u8, w: u128) -> Result<Instruction, IsaError> {
    let instr = match opcode {
        OP_PULSE => Instruction::Pulse {
            time: get(w, 72, 32) as u32,
            dest_channel: get(w, 104, 16) as u16,
            cmd: PulseCommand::unpack(w),
        },
        OP_ALU => {
            let dst = match get(w, 56, 8) as u8 {
                DST_REG => AluDst::Reg(get(w, 48, 8) as u8),
                DST_QCLK => AluDst::QclkIncrement,
                DST_IP => AluDst::InstructionPointer,
                kind => {
                    return Err(IsaError::InvalidField {
                        opcode,
                        field: "dst kind",
                        value: kind as u64,
                    })
                }
            };
            Instruction::Alu {
                op: decode_alu_fn(opcode, w)?,
                lhs: get(w, 104, 8) as u8,
                rhs: decode_operand(opcode, w)?,
                dst,
            }
        }
        OP_JUMP => Instruction::Jump {
            target: get(w, 16, 32) as u32,
        },
        OP_BRANCH_ALU => Instruction::BranchAlu {
            op: decode_alu_fn(opcode, w)?,
            lhs: get(w, 104, 8) as u8,
            rhs: decode_operand(opcode, w)?,
            target: get(w, 16, 32) as u32,
        },
        OP_READ_FPROC => Instruction::ReadFproc {
            fproc_id: get(w, 104, 16) as u16,
            dst: get(w, 48, 8) as u8,
        },
        OP_BRANCH_FPROC => Instruction::BranchFproc {
            fproc_id: get(w, 104, 16) as u16,
            compare_value: get(w, 64, 32) as u32 as i32,
            target: get(w, 16, 32) as u32,
        },
        OP_SYNC => Instruction::Sync {
            barrier_id: get(w, 112, 8) as u8,
            core_mask: get(w, 48, 64) as u64,
        },
        OP_HALT => Instruction::Halt,
        other => return Err(IsaError::UnknownOpcode(other)),
    };
    Ok(instr)
}

pub fn decode_instruction(word: u128) -> Result<Instruction, IsaError> {
    let opcode = (word >> 120) as u8;
    let instr = decode_fields(opcode, word)?;
    instr.validate().map_err(|e| match e {
        IsaError::FieldRange { field, value, .. } => IsaError::InvalidField {
            opcode,
            field,
            value,
        },
        other => other,
    })?;
    // Anything the fields did not account for is a reserved bit.
    if encode_instruction(&instr)? != word {
        return Err(IsaError::ReservedBits { opcode });
    }
    Ok(instr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_pulse_has_only_opcode_bits() {
        let instr = Instruction::Pulse {
            time: 0,
            dest_channel: 0,
            cmd: PulseCommand::default(),
        };
        assert_eq!(encode_instruction(&instr).unwrap(), (OP_PULSE as u128) << 120);
    }

    #[test]
    fn halt_roundtrip() {
        let w = encode_instruction(&Instruction::Halt).unwrap();
        assert_eq!(decode_instruction(w).unwrap(), Instruction::Halt);
    }

    #[test]
    fn reserved_opcode_rejected() {
        assert_eq!(
            decode_instruction(0xFFu128 << 120),
            Err(IsaError::UnknownOpcode(0xFF))
        );
        assert_eq!(decode_instruction(0), Err(IsaError::UnknownOpcode(0)));
    }

    #[test]
    fn reserved_bits_rejected() {
        let w = encode_instruction(&Instruction::Halt).unwrap() | 1;
        assert_eq!(
            decode_instruction(w),
            Err(IsaError::ReservedBits { opcode: OP_HALT })
        );
    }

    #[test]
    fn bad_register_named() {
        let instr = Instruction::ReadFproc { fproc_id: 0, dst: 16 };
        assert!(matches!(
            encode_instruction(&instr),
            Err(IsaError::FieldRange { field: "dst", .. })
        ));
        let w = ((OP_READ_FPROC as u128) << 120) | (16u128 << 48);
        assert!(matches!(
            decode_instruction(w),
            Err(IsaError::InvalidField { field: "dst", .. })
        ));
    }

    #[test]
    fn negative_immediates_survive() {
        let instr = Instruction::BranchFproc {
            fproc_id: 3,
            compare_value: -42,
            target: 7,
        };
        let w = encode_instruction(&instr).unwrap();
        assert_eq!(decode_instruction(w).unwrap(), instr);
    }

    proptest! {
        #[test]
        fn random_instructions_roundtrip(seed in any::<u64>()) {
            use rand_chacha::rand_core::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let instr = super::super::random_instruction(&mut rng);
            prop_assert_eq!(decode_instruction(encode_instruction(&instr).unwrap()).unwrap(), instr);
        }

        #[test]
        fn arbitrary_words_either_fail_or_reencode(w in any::<u128>(), op in 0u8..10) {
            let w = (w & !(0xFFu128 << 120)) | ((op as u128) << 120);
            if let Ok(instr) = decode_instruction(w) {
                prop_assert_eq!(encode_instruction(&instr).unwrap(), w);
            }
        }
    }
}
