// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! Instruction set of the distributed control processor.
//!
//! Every core executes a flat list of [`Instruction`]s. Timed pulse
//! instructions carry a 72-bit [`PulseCommand`] that parameterizes one
//! pulse generator output; the remaining instructions implement control
//! flow over a 16-entry signed 32-bit [`RegisterFile`], the function
//! processor interface, and the inter-core sync barrier.
//!
//! Instructions are stored as fixed 128-bit words (see [`codec`]) and
//! whole multi-core programs as `QBC2` files (see [`file`]).

pub mod codec;
pub mod file;

use std::f64::consts::TAU;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use codec::{decode_instruction, encode_instruction};
pub use file::ProgramFile;

pub const FREQ_BITS: u32 = 24;
pub const PHASE_BITS: u32 = 14;
pub const AMP_BITS: u32 = 10;
pub const LENGTH_BITS: u32 = 12;
pub const ENV_ADDR_BITS: u32 = 12;

/// Width of a packed pulse command.
pub const PULSE_COMMAND_BITS: u32 = FREQ_BITS + PHASE_BITS + AMP_BITS + LENGTH_BITS + ENV_ADDR_BITS;
const _: () = assert!(PULSE_COMMAND_BITS == 72);

pub const FREQ_MAX: u32 = (1 << FREQ_BITS) - 1;
pub const PHASE_MAX: u16 = (1 << PHASE_BITS) - 1;
pub const AMP_MAX: u16 = (1 << AMP_BITS) - 1;
pub const LENGTH_MAX: u16 = (1 << LENGTH_BITS) - 1;
pub const ENV_ADDR_MAX: u16 = (1 << ENV_ADDR_BITS) - 1;

/// Envelope memory depth per channel, in complex entries.
pub const ENVELOPE_CAPACITY: usize = 4096;

pub const NUM_REGISTERS: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IsaError {
    #[error("field `{field}` out of range: {value} > {max}")]
    FieldRange {
        field: &'static str,
        value: u64,
        max: u64,
    },
    #[error("unknown opcode 0x{0:02x}")]
    UnknownOpcode(u8),
    #[error("invalid value {value} in field `{field}` of opcode 0x{opcode:02x}")]
    InvalidField {
        opcode: u8,
        field: &'static str,
        value: u64,
    },
    #[error("reserved bits set in word with opcode 0x{opcode:02x}")]
    ReservedBits { opcode: u8 },
    #[error("frequency {f_hz} Hz outside [0, {fs_hz}) Hz")]
    FrequencyRange { f_hz: f64, fs_hz: f64 },
    #[error("amplitude {0} outside [0, 1]")]
    AmplitudeRange(f64),
    #[error("program file: {0}")]
    Format(String),
}

/// Parameters of one generated pulse, packed into 72 bits as
/// `[freq:24 | phase:14 | amp:10 | length:12 | env_addr:12]` (msb first).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PulseCommand {
    /// Carrier frequency as a fraction of the channel sample rate, `freq_word / 2^24`.
    pub freq_word: u32,
    /// Initial phase, `phase_word / 2^14` turns.
    pub phase_word: u16,
    /// Amplitude scale, `amp_word / 2^10`.
    pub amp_word: u16,
    /// Duration in output samples.
    pub length: u16,
    /// First envelope memory entry read by this pulse.
    pub env_addr: u16,
}

impl PulseCommand {
    pub fn validate(&self) -> Result<(), IsaError> {
        check_field("freq_word", self.freq_word as u64, FREQ_MAX as u64)?;
        check_field("phase_word", self.phase_word as u64, PHASE_MAX as u64)?;
        check_field("amp_word", self.amp_word as u64, AMP_MAX as u64)?;
        check_field("length", self.length as u64, LENGTH_MAX as u64)?;
        check_field("env_addr", self.env_addr as u64, ENV_ADDR_MAX as u64)
    }

    /// Packs the command into the low 72 bits of a `u128`.
    pub fn pack(&self) -> Result<u128, IsaError> {
        self.validate()?;
        Ok(((self.freq_word as u128) << 48)
            | ((self.phase_word as u128) << 34)
            | ((self.amp_word as u128) << 24)
            | ((self.length as u128) << 12)
            | self.env_addr as u128)
    }

    /// Inverse of [`pack`](Self::pack); bits above 72 are ignored.
    pub fn unpack(bits: u128) -> Self {
        PulseCommand {
            freq_word: ((bits >> 48) & FREQ_MAX as u128) as u32,
            phase_word: ((bits >> 34) & PHASE_MAX as u128) as u16,
            amp_word: ((bits >> 24) & AMP_MAX as u128) as u16,
            length: ((bits >> 12) & LENGTH_MAX as u128) as u16,
            env_addr: (bits & ENV_ADDR_MAX as u128) as u16,
        }
    }

    /// Carrier frequency in cycles per sample.
    pub fn cycles_per_sample(&self) -> f64 {
        self.freq_word as f64 / (1u64 << FREQ_BITS) as f64
    }

    pub fn phase_rad(&self) -> f64 {
        self.phase_word as f64 / (1u32 << PHASE_BITS) as f64 * TAU
    }

    pub fn amplitude(&self) -> f64 {
        self.amp_word as f64 / (1u32 << AMP_BITS) as f64
    }
}

pub(crate) fn check_field(field: &'static str, value: u64, max: u64) -> Result<(), IsaError> {
    if value > max {
        Err(IsaError::FieldRange { field, value, max })
    } else {
        Ok(())
    }
}

/// Rounds half away from zero; `f64::round` already does this.
fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// Quantizes a carrier frequency to a 24-bit word, `round(f/fs * 2^24)`.
pub fn quantize_freq(f_hz: f64, fs_hz: f64) -> Result<u32, IsaError> {
    if !(f_hz.is_finite() && fs_hz > 0.0 && f_hz >= 0.0 && f_hz < fs_hz) {
        return Err(IsaError::FrequencyRange { f_hz, fs_hz });
    }
    let word = round_half_away(f_hz / fs_hz * (1u64 << FREQ_BITS) as f64) as u64;
    // Only reachable within fs/2^25 of fs.
    Ok(word.min(FREQ_MAX as u64) as u32)
}

/// Quantizes a phase to a 14-bit word after wrapping into `[0, 2pi)`.
pub fn quantize_phase(phi_rad: f64) -> u16 {
    let turns = phi_rad.rem_euclid(TAU) / TAU;
    let word = round_half_away(turns * (1u32 << PHASE_BITS) as f64) as u64;
    (word % (1u64 << PHASE_BITS)) as u16
}

/// Quantizes an amplitude in `[0, 1]` to a 10-bit word; 1.0 saturates to the
/// largest representable scale.
pub fn quantize_amp(a: f64) -> Result<u16, IsaError> {
    if !(0.0..=1.0).contains(&a) {
        return Err(IsaError::AmplitudeRange(a));
    }
    let word = round_half_away(a * (1u32 << AMP_BITS) as f64) as u64;
    Ok(word.min(AMP_MAX as u64) as u16)
}

/// ALU function. Comparisons produce 1 or 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AluFn {
    Add,
    Sub,
    Eq,
    Gt,
    Lt,
    Ge,
    Le,
}

impl AluFn {
    pub const ALL: [AluFn; 7] = [
        AluFn::Add,
        AluFn::Sub,
        AluFn::Eq,
        AluFn::Gt,
        AluFn::Lt,
        AluFn::Ge,
        AluFn::Le,
    ];

    pub fn is_comparison(self) -> bool {
        !matches!(self, AluFn::Add | AluFn::Sub)
    }

    /// Signed 32-bit evaluation with wrap-around for add/sub.
    pub fn eval(self, lhs: i32, rhs: i32) -> i32 {
        match self {
            AluFn::Add => lhs.wrapping_add(rhs),
            AluFn::Sub => lhs.wrapping_sub(rhs),
            AluFn::Eq => (lhs == rhs) as i32,
            AluFn::Gt => (lhs > rhs) as i32,
            AluFn::Lt => (lhs < rhs) as i32,
            AluFn::Ge => (lhs >= rhs) as i32,
            AluFn::Le => (lhs <= rhs) as i32,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            AluFn::Add => "add",
            AluFn::Sub => "sub",
            AluFn::Eq => "eq",
            AluFn::Gt => "gt",
            AluFn::Lt => "lt",
            AluFn::Ge => "ge",
            AluFn::Le => "le",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.mnemonic() == s)
    }
}

/// Second ALU operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    Reg(u8),
    Imm(i32),
}

/// Where an ALU result goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AluDst {
    Reg(u8),
    /// Added to the core's time reference counter.
    QclkIncrement,
    /// Written to the instruction pointer.
    InstructionPointer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instruction {
    /// Fire `cmd` on `dest_channel` when the core's qclk equals `time`.
    Pulse {
        time: u32,
        dest_channel: u16,
        cmd: PulseCommand,
    },
    Alu {
        op: AluFn,
        lhs: u8,
        rhs: Operand,
        dst: AluDst,
    },
    Jump {
        target: u32,
    },
    /// Branch to `target` when `op(lhs, rhs)` is nonzero; `op` must be a comparison.
    BranchAlu {
        op: AluFn,
        lhs: u8,
        rhs: Operand,
        target: u32,
    },
    /// Stall until a function-processor result is available, then load it.
    ReadFproc {
        fproc_id: u16,
        dst: u8,
    },
    /// Stall until a function-processor result is available; branch when it
    /// equals `compare_value`.
    BranchFproc {
        fproc_id: u16,
        compare_value: i32,
        target: u32,
    },
    /// Wait until every core in `core_mask` reached this barrier, then reset qclk.
    Sync {
        barrier_id: u8,
        core_mask: u64,
    },
    Halt,
}

impl Instruction {
    /// Checks register ids and operation classes; branch targets are checked
    /// against the owning program by [`validate_program`].
    pub fn validate(&self) -> Result<(), IsaError> {
        let reg = |field, r: u8| check_field(field, r as u64, (NUM_REGISTERS - 1) as u64);
        match *self {
            Instruction::Pulse { cmd, .. } => cmd.validate(),
            Instruction::Alu { lhs, rhs, dst, .. } => {
                reg("lhs", lhs)?;
                if let Operand::Reg(r) = rhs {
                    reg("rhs", r)?;
                }
                if let AluDst::Reg(r) = dst {
                    reg("dst", r)?;
                }
                Ok(())
            }
            Instruction::BranchAlu { op, lhs, rhs, .. } => {
                if !op.is_comparison() {
                    return Err(IsaError::InvalidField {
                        opcode: codec::OP_BRANCH_ALU,
                        field: "op",
                        value: op.code() as u64,
                    });
                }
                reg("lhs", lhs)?;
                if let Operand::Reg(r) = rhs {
                    reg("rhs", r)?;
                }
                Ok(())
            }
            Instruction::ReadFproc { dst, .. } => reg("dst", dst),
            Instruction::Jump { .. }
            | Instruction::BranchFproc { .. }
            | Instruction::Sync { .. }
            | Instruction::Halt => Ok(()),
        }
    }

    pub fn branch_target(&self) -> Option<u32> {
        match *self {
            Instruction::Jump { target }
            | Instruction::BranchAlu { target, .. }
            | Instruction::BranchFproc { target, .. } => Some(target),
            _ => None,
        }
    }
}

/// Validates every instruction and that all branch targets land inside the program.
pub fn validate_program(program: &[Instruction]) -> Result<(), IsaError> {
    for instr in program {
        instr.validate()?;
        if let Some(target) = instr.branch_target() {
            if program.is_empty() || target as usize >= program.len() {
                return Err(IsaError::FieldRange {
                    field: "target",
                    value: target as u64,
                    max: program.len().saturating_sub(1) as u64,
                });
            }
        }
    }
    Ok(())
}

fn fmt_operand(op: &Operand) -> String {
    match op {
        Operand::Reg(r) => format!("r{r}"),
        Operand::Imm(v) => format!("#{v}"),
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instruction::Pulse {
                time,
                dest_channel,
                cmd,
            } => write!(
                f,
                "pulse t={time} ch={dest_channel} freq=0x{:06x} phase=0x{:04x} amp=0x{:03x} len={} env=0x{:03x}",
                cmd.freq_word, cmd.phase_word, cmd.amp_word, cmd.length, cmd.env_addr
            ),
            Instruction::Alu { op, lhs, rhs, dst } => {
                let dst = match dst {
                    AluDst::Reg(r) => format!("r{r}"),
                    AluDst::QclkIncrement => "qclk".to_string(),
                    AluDst::InstructionPointer => "ip".to_string(),
                };
                write!(f, "alu {} r{lhs} {} -> {dst}", op.mnemonic(), fmt_operand(rhs))
            }
            Instruction::Jump { target } => write!(f, "jump @{target}"),
            Instruction::BranchAlu {
                op,
                lhs,
                rhs,
                target,
            } => write!(
                f,
                "bralu {} r{lhs} {} @{target}",
                op.mnemonic(),
                fmt_operand(rhs)
            ),
            Instruction::ReadFproc { fproc_id, dst } => write!(f, "rdfproc {fproc_id} -> r{dst}"),
            Instruction::BranchFproc {
                fproc_id,
                compare_value,
                target,
            } => write!(f, "brfproc {fproc_id} #{compare_value} @{target}"),
            Instruction::Sync {
                barrier_id,
                core_mask,
            } => write!(f, "sync {barrier_id} mask=0x{core_mask:x}"),
            Instruction::Halt => write!(f, "halt"),
        }
    }
}

/// Sixteen signed 32-bit registers; unwritten registers read as zero.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RegisterFile {
    regs: [i32; NUM_REGISTERS],
}

impl RegisterFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read(&self, reg: u8) -> i32 {
        self.regs[reg as usize]
    }

    pub fn write(&mut self, reg: u8, value: i32) {
        self.regs[reg as usize] = value;
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.regs
    }
}

/// Draws a uniformly parameterized valid instruction; branch targets are
/// arbitrary and not checked against any program.
pub fn random_instruction<R: Rng + ?Sized>(rng: &mut R) -> Instruction {
    let reg = |rng: &mut R| rng.random_range(0..NUM_REGISTERS as u8);
    let operand = |rng: &mut R| {
        if rng.random() {
            Operand::Imm(rng.random())
        } else {
            Operand::Reg(rng.random_range(0..NUM_REGISTERS as u8))
        }
    };
    match rng.random_range(0..8) {
        0 => Instruction::Pulse {
            time: rng.random(),
            dest_channel: rng.random(),
            cmd: PulseCommand {
                freq_word: rng.random_range(0..=FREQ_MAX),
                phase_word: rng.random_range(0..=PHASE_MAX),
                amp_word: rng.random_range(0..=AMP_MAX),
                length: rng.random_range(0..=LENGTH_MAX),
                env_addr: rng.random_range(0..=ENV_ADDR_MAX),
            },
        },
        1 => Instruction::Alu {
            op: AluFn::ALL[rng.random_range(0..AluFn::ALL.len())],
            lhs: reg(rng),
            rhs: operand(rng),
            dst: match rng.random_range(0..3) {
                0 => AluDst::Reg(reg(rng)),
                1 => AluDst::QclkIncrement,
                _ => AluDst::InstructionPointer,
            },
        },
        2 => Instruction::Jump { target: rng.random() },
        3 => Instruction::BranchAlu {
            op: AluFn::ALL[rng.random_range(2..AluFn::ALL.len())],
            lhs: reg(rng),
            rhs: operand(rng),
            target: rng.random(),
        },
        4 => Instruction::ReadFproc {
            fproc_id: rng.random(),
            dst: reg(rng),
        },
        5 => Instruction::BranchFproc {
            fproc_id: rng.random(),
            compare_value: rng.random(),
            target: rng.random(),
        },
        6 => Instruction::Sync {
            barrier_id: rng.random(),
            core_mask: rng.random(),
        },
        _ => Instruction::Halt,
    }
}
