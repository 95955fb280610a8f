// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! Text listings of binary programs, and the parser that reads them back.

use std::fmt::Write;

use super::AssembleError;
use crate::isa::file::CoreImage;
use crate::isa::{AluDst, AluFn, Instruction, Operand, ProgramFile, PulseCommand};

/// One `core N` header per core followed by `index: instruction` lines.
pub fn listing(program: &ProgramFile) -> String {
    let mut out = String::new();
    for core in &program.cores {
        let _ = writeln!(out, "core {}", core.core_id);
        for (k, instr) in core.instructions.iter().enumerate() {
            let _ = writeln!(out, "{k:6}: {instr}");
        }
    }
    out
}

/// Decodes a binary program and lists it.
pub fn disassemble(bytes: &[u8]) -> Result<String, AssembleError> {
    Ok(listing(&ProgramFile::from_bytes(bytes)?))
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("bad number {s:?}"))
}

fn hex<T: TryFrom<u64>>(s: &str) -> Result<T, String> {
    let digits = s.strip_prefix("0x").ok_or_else(|| format!("expected hex, got {s:?}"))?;
    let v = u64::from_str_radix(digits, 16).map_err(|_| format!("bad hex {s:?}"))?;
    T::try_from(v).map_err(|_| format!("{s} out of range"))
}

fn reg(s: &str) -> Result<u8, String> {
    num(s.strip_prefix('r').ok_or_else(|| format!("expected register, got {s:?}"))?)
}

fn operand(s: &str) -> Result<Operand, String> {
    match s.strip_prefix('#') {
        Some(v) => Ok(Operand::Imm(num(v)?)),
        None => Ok(Operand::Reg(reg(s)?)),
    }
}

fn target(s: &str) -> Result<u32, String> {
    num(s.strip_prefix('@').ok_or_else(|| format!("expected @target, got {s:?}"))?)
}

fn alu_fn(s: &str) -> Result<AluFn, String> {
    AluFn::from_mnemonic(s).ok_or_else(|| format!("unknown alu function {s:?}"))
}

fn field<'a>(tok: &'a str, key: &str) -> Result<&'a str, String> {
    tok.strip_prefix(key)
        .and_then(|t| t.strip_prefix('='))
        .ok_or_else(|| format!("expected {key}=, got {tok:?}"))
}

/// Parses one instruction in the listing syntax.
pub fn parse_instruction(text: &str) -> Result<Instruction, String> {
    let t: Vec<&str> = text.split_whitespace().collect();
    let arity = |n: usize| {
        if t.len() == n {
            Ok(())
        } else {
            Err(format!("{} expects {} operands, got {}", t[0], n - 1, t.len() - 1))
        }
    };
    let Some(&mnemonic) = t.first() else {
        return Err("empty instruction".into());
    };
    match mnemonic {
        "pulse" => {
            arity(8)?;
            Ok(Instruction::Pulse {
                time: num(field(t[1], "t")?)?,
                dest_channel: num(field(t[2], "ch")?)?,
                cmd: PulseCommand {
                    freq_word: hex(field(t[3], "freq")?)?,
                    phase_word: hex(field(t[4], "phase")?)?,
                    amp_word: hex(field(t[5], "amp")?)?,
                    length: num(field(t[6], "len")?)?,
                    env_addr: hex(field(t[7], "env")?)?,
                },
            })
        }
        "alu" => {
            arity(6)?;
            if t[4] != "->" {
                return Err(format!("expected ->, got {:?}", t[4]));
            }
            let dst = match t[5] {
                "qclk" => AluDst::QclkIncrement,
                "ip" => AluDst::InstructionPointer,
                r => AluDst::Reg(reg(r)?),
            };
            Ok(Instruction::Alu {
                op: alu_fn(t[1])?,
                lhs: reg(t[2])?,
                rhs: operand(t[3])?,
                dst,
            })
        }
        "jump" => {
            arity(2)?;
            Ok(Instruction::Jump { target: target(t[1])? })
        }
        "bralu" => {
            arity(5)?;
            Ok(Instruction::BranchAlu {
                op: alu_fn(t[1])?,
                lhs: reg(t[2])?,
                rhs: operand(t[3])?,
                target: target(t[4])?,
            })
        }
        "rdfproc" => {
            arity(4)?;
            if t[2] != "->" {
                return Err(format!("expected ->, got {:?}", t[2]));
            }
            Ok(Instruction::ReadFproc {
                fproc_id: num(t[1])?,
                dst: reg(t[3])?,
            })
        }
        "brfproc" => {
            arity(4)?;
            Ok(Instruction::BranchFproc {
                fproc_id: num(t[1])?,
                compare_value: num(t[2].strip_prefix('#').ok_or("expected #value")?)?,
                target: target(t[3])?,
            })
        }
        "sync" => {
            arity(3)?;
            Ok(Instruction::Sync {
                barrier_id: num(t[1])?,
                core_mask: hex(field(t[2], "mask")?)?,
            })
        }
        "halt" => {
            arity(1)?;
            Ok(Instruction::Halt)
        }
        other => Err(format!("unknown mnemonic {other:?}")),
    }
}

/// Reads a listing back into a program. Blank lines and `;` comments are ignored.
pub fn parse_listing(text: &str) -> Result<ProgramFile, AssembleError> {
    let mut cores: Vec<CoreImage> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let err = |message: String| AssembleError::Listing { line: n + 1, message };
        let line = raw.split(';').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(id) = line.strip_prefix("core ") {
            cores.push(CoreImage {
                core_id: num(id.trim()).map_err(err)?,
                instructions: Vec::new(),
            });
            continue;
        }
        let core = cores
            .last_mut()
            .ok_or_else(|| err("instruction before any core header".into()))?;
        let (index, body) = line
            .split_once(':')
            .ok_or_else(|| err("expected `index: instruction`".into()))?;
        let index: usize = num(index.trim()).map_err(err)?;
        if index != core.instructions.len() {
            return Err(err(format!(
                "index {index} out of sequence, expected {}",
                core.instructions.len()
            )));
        }
        let instr = parse_instruction(body).map_err(err)?;
        instr.validate().map_err(|e| err(e.to_string()))?;
        core.instructions.push(instr);
    }
    Ok(ProgramFile { cores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::random_instruction;
    use rand_chacha::rand_core::SeedableRng;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let cases = [
            "pulse t=100 ch=3 freq=0x100000 phase=0x1000 amp=0x200 len=256 env=0x040",
            "alu add r1 #5 -> r2",
            "alu sub r1 r3 -> qclk",
            "alu add r0 #7 -> ip",
            "jump @12",
            "bralu eq r1 #-1 @3",
            "rdfproc 2 -> r4",
            "brfproc 0 #1 @9",
            "sync 0 mask=0x3",
            "halt",
        ];
        for c in cases {
            let i = parse_instruction(c).unwrap_or_else(|e| panic!("{c}: {e}"));
            assert_eq!(i.to_string(), c);
        }
        assert!(parse_instruction("pulse t=1").is_err());
        assert!(parse_instruction("nop").is_err());
    }

    #[test]
    fn listing_rejects_out_of_sequence() {
        assert!(parse_listing("core 0\n  1: halt\n").is_err());
        assert!(parse_listing("  0: halt\n").is_err());
        let p = parse_listing("; comment\ncore 1\n  0: halt ; end\n").unwrap();
        assert_eq!(p.cores[0].core_id, 1);
    }

    proptest! {
        #[test]
        fn text_roundtrip(seed in any::<u64>()) {
            let instr = random_instruction(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(parse_instruction(&instr.to_string()).unwrap(), instr);
        }
    }
}
