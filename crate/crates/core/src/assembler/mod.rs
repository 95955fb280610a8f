// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! Per-core pulse programs to `QBC2` binaries and `QEV1` envelope images.
//!
//! Every pulse becomes a timed `Pulse` instruction whose time field is the
//! scheduled time plus the dispatch offset. Conditionals lower to
//!
//! ```text
//!        brfproc F #V @then      (or bralu eq rN #V @then)
//!        <else arm>
//!        jump @end
//! then:  <then arm>
//! end:
//! ```
//!
//! and every core program ends with `halt`.

mod envelope;
mod listing;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use envelope::{EnvelopeEntry, EnvelopeImage, EnvelopeSlot, ENVELOPE_MAGIC};
pub use listing::{disassemble, listing, parse_instruction, parse_listing};

use crate::compiler::hardware::ChannelMap;
use crate::compiler::ir::ResultInfo;
use crate::compiler::split::{Condition, CoreOp, PulseOp, PulseProgram};
use crate::dsp::quantize_sample;
use crate::isa::file::CoreImage;
use crate::isa::{
    quantize_amp, quantize_freq, quantize_phase, AluFn, Instruction, IsaError, Operand,
    ProgramFile, PulseCommand,
};
use num_complex::Complex64;

#[derive(Debug, Error)]
pub enum AssembleError {
    #[error("envelope memory of {channel} overflows: {needed} entries needed, capacity {capacity}")]
    EnvelopeOverflow {
        channel: String,
        needed: usize,
        capacity: usize,
    },
    #[error("destination {0} is not mapped to a channel")]
    Unmapped(String),
    #[error("{freq} Hz on {channel} is above the Nyquist limit {} Hz", .fs / 2.0)]
    Nyquist { channel: String, freq: f64, fs: f64 },
    #[error("unknown envelope {0}")]
    UnknownEnvelope(String),
    #[error("pulse on {channel} at {time}: {source}")]
    Pulse {
        channel: String,
        time: u64,
        source: IsaError,
    },
    #[error(transparent)]
    Isa(#[from] IsaError),
    #[error("listing line {line}: {message}")]
    Listing { line: usize, message: String },
    #[error("{0}")]
    Format(String),
}

/// Side information a runner needs next to the binary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dispatch_offset: u64,
    pub results: Vec<ResultInfo>,
    /// Channel name to envelope name to slot.
    pub envelopes: BTreeMap<String, BTreeMap<String, EnvelopeSlot>>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifests serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, AssembleError> {
        serde_json::from_str(text).map_err(|e| AssembleError::Format(format!("manifest: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    pub program: ProgramFile,
    /// One image per output channel, in channel id order.
    pub images: Vec<EnvelopeImage>,
    pub manifest: Manifest,
}

impl Assembly {
    pub fn binary(&self) -> Result<Vec<u8>, AssembleError> {
        Ok(self.program.to_bytes()?)
    }

    pub fn image(&self, channel: &str) -> Option<&EnvelopeImage> {
        self.images.iter().find(|i| i.channel == channel)
    }
}

struct Lowering<'a> {
    map: &'a ChannelMap,
    envelopes: &'a BTreeMap<String, Vec<[f64; 2]>>,
    images: BTreeMap<String, EnvelopeImage>,
    offset: u64,
}

impl Lowering<'_> {
    fn pulse(&mut self, p: &PulseOp) -> Result<Instruction, AssembleError> {
        let ch = self
            .map
            .channel(&p.channel)
            .ok_or_else(|| AssembleError::Unmapped(p.channel.clone()))?;
        if p.freq > ch.sample_rate / 2.0 {
            return Err(AssembleError::Nyquist {
                channel: ch.name.clone(),
                freq: p.freq,
                fs: ch.sample_rate,
            });
        }
        let at = |source| AssembleError::Pulse {
            channel: ch.name.clone(),
            time: p.time,
            source,
        };
        let env_addr = match &p.env {
            None => 0,
            Some(name) => {
                let samples = self
                    .envelopes
                    .get(name)
                    .ok_or_else(|| AssembleError::UnknownEnvelope(name.clone()))?;
                let q = samples
                    .iter()
                    .map(|&[i, q]| quantize_sample(Complex64::new(i, q)))
                    .collect();
                let image = self
                    .images
                    .get_mut(&ch.name)
                    .ok_or_else(|| AssembleError::Unmapped(ch.name.clone()))?;
                image.insert(name, q)?.addr
            }
        };
        let time = u32::try_from(p.time + self.offset)
            .map_err(|_| at(IsaError::Format("time exceeds 32 bits".into())))?;
        let cmd = PulseCommand {
            freq_word: quantize_freq(p.freq, ch.sample_rate).map_err(at)?,
            phase_word: quantize_phase(p.phase),
            amp_word: quantize_amp(p.amp).map_err(at)?,
            length: u16::try_from(p.length).unwrap_or(u16::MAX),
            env_addr,
        };
        cmd.validate().map_err(at)?;
        Ok(Instruction::Pulse {
            time,
            dest_channel: ch.id,
            cmd,
        })
    }

    fn ops(&mut self, ops: &[CoreOp], out: &mut Vec<Instruction>) -> Result<(), AssembleError> {
        for op in ops {
            match op {
                CoreOp::Sync { barrier, mask } => out.push(Instruction::Sync {
                    barrier_id: *barrier,
                    core_mask: *mask,
                }),
                CoreOp::Pulse(p) => out.push(self.pulse(p)?),
                CoreOp::Read { fproc_id, reg } => out.push(Instruction::ReadFproc {
                    fproc_id: *fproc_id,
                    dst: *reg,
                }),
                CoreOp::Branch {
                    cond,
                    expected,
                    then_ops,
                    else_ops,
                    ..
                } => {
                    let branch = out.len();
                    out.push(Instruction::Halt);
                    self.ops(else_ops, out)?;
                    let jump = out.len();
                    out.push(Instruction::Halt);
                    let then_at = out.len() as u32;
                    self.ops(then_ops, out)?;
                    let end = out.len() as u32;
                    out[branch] = match *cond {
                        Condition::Fproc(fproc_id) => Instruction::BranchFproc {
                            fproc_id,
                            compare_value: *expected,
                            target: then_at,
                        },
                        Condition::Reg(r) => Instruction::BranchAlu {
                            op: AluFn::Eq,
                            lhs: r,
                            rhs: Operand::Imm(*expected),
                            target: then_at,
                        },
                    };
                    out[jump] = Instruction::Jump { target: end };
                }
            }
        }
        Ok(())
    }
}

/// Assembles per-core pulse programs against the channel map.
pub fn assemble(prog: &PulseProgram, map: &ChannelMap) -> Result<Assembly, AssembleError> {
    let mut low = Lowering {
        map,
        envelopes: &prog.envelopes,
        images: map
            .channels
            .iter()
            .filter(|c| c.kind.is_output())
            .map(|c| (c.name.clone(), EnvelopeImage::new(&c.name, c.env_capacity)))
            .collect(),
        offset: map.dispatch_offset,
    };
    let mut cores = Vec::with_capacity(prog.cores.len());
    for core in &prog.cores {
        let mut instructions = Vec::new();
        low.ops(&core.ops, &mut instructions)?;
        instructions.push(Instruction::Halt);
        cores.push(CoreImage {
            core_id: core.core,
            instructions,
        });
    }
    let mut images: Vec<EnvelopeImage> = low.images.into_values().collect();
    images.sort_by_key(|i| map.channel(&i.channel).map(|c| c.id));
    let manifest = Manifest {
        dispatch_offset: map.dispatch_offset,
        results: prog.results.clone(),
        envelopes: images
            .iter()
            .map(|i| (i.channel.clone(), i.directory.clone()))
            .collect(),
    };
    Ok(Assembly {
        program: ProgramFile { cores },
        images,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::hardware::HardwareConfig;
    use crate::compiler::ir::tests::{CAL, HW};
    use crate::compiler::split::CoreProgram;
    use crate::compiler::{compile, CalibrationSet};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn map() -> ChannelMap {
        HardwareConfig::from_json(HW).unwrap().resolve().unwrap()
    }

    fn pulse(time: u64, channel: &str, env: Option<&str>, length: u32) -> CoreOp {
        CoreOp::Pulse(PulseOp {
            time,
            channel: channel.into(),
            channel_id: 0,
            freq: 100e6,
            phase: 0.0,
            amp: 0.5,
            env: env.map(Into::into),
            length,
        })
    }

    fn program(ops: Vec<CoreOp>, envelopes: &[(&str, usize)]) -> PulseProgram {
        PulseProgram {
            cores: vec![CoreProgram { core: 0, ops }],
            envelopes: envelopes
                .iter()
                .enumerate()
                .map(|(k, &(n, len))| (n.to_string(), vec![[0.1 * (k + 1) as f64, 0.0]; len]))
                .collect(),
            results: vec![],
        }
    }

    #[test]
    fn empty_program_is_single_halt() {
        let a = assemble(&program(vec![], &[]), &map()).unwrap();
        assert_eq!(a.program.cores[0].instructions, vec![Instruction::Halt]);
    }

    #[test]
    fn shared_envelope_stored_once() {
        let ops = (0..50).map(|k| pulse(16 * k, "Q0.drive", Some("g"), 64)).collect();
        let a = assemble(&program(ops, &[("g", 64)]), &map()).unwrap();
        let img = a.image("Q0.drive").unwrap();
        assert_eq!(img.entries.len(), 1);
        let instrs = &a.program.cores[0].instructions;
        assert_eq!(instrs.len(), 51);
        for (k, i) in instrs[..50].iter().enumerate() {
            let Instruction::Pulse { time, cmd, .. } = i else { panic!() };
            assert_eq!(cmd.env_addr, 0);
            assert_eq!(*time as u64, 16 * k as u64 + 16);
        }
    }

    #[test]
    fn first_fit_addresses() {
        let ops = vec![pulse(0, "Q0.drive", Some("a"), 64), pulse(16, "Q0.drive", Some("b"), 32)];
        let a = assemble(&program(ops, &[("a", 64), ("b", 32)]), &map()).unwrap();
        let dir = &a.manifest.envelopes["Q0.drive"];
        assert_eq!(dir["a"], EnvelopeSlot { addr: 0, len: 64 });
        assert_eq!(dir["b"], EnvelopeSlot { addr: 64, len: 32 });
    }

    #[test]
    fn errors() {
        let unmapped = assemble(&program(vec![pulse(0, "nope", None, 4)], &[]), &map());
        assert!(matches!(unmapped, Err(AssembleError::Unmapped(_))));
        let mut op = pulse(0, "Q0.rdrv", None, 4);
        if let CoreOp::Pulse(p) = &mut op {
            p.freq = 1.5e9;
        }
        assert!(matches!(
            assemble(&program(vec![op], &[]), &map()),
            Err(AssembleError::Nyquist { .. })
        ));
        let ops = vec![pulse(0, "Q0.drive", Some("a"), 3000), pulse(1000, "Q0.drive", Some("b"), 3000)];
        assert!(matches!(
            assemble(&program(ops, &[("a", 3000), ("b", 3000)]), &map()),
            Err(AssembleError::EnvelopeOverflow { .. })
        ));
    }

    #[test]
    fn branch_layout() {
        let ops = vec![CoreOp::Branch {
            cond: Condition::Fproc(2),
            expected: 1,
            start: 0,
            end: 64,
            then_ops: vec![pulse(0, "Q0.drive", Some("g"), 64)],
            else_ops: vec![pulse(0, "Q0.drive", Some("g"), 64), pulse(16, "Q0.drive", Some("g"), 64)],
        }];
        let a = assemble(&program(ops, &[("g", 64)]), &map()).unwrap();
        let text: Vec<String> = a.program.cores[0].instructions.iter().map(|i| i.to_string()).collect();
        assert_eq!(text[0], "brfproc 2 #1 @4");
        assert_eq!(text[3], "jump @5");
        assert_eq!(text[5], "halt");
    }

    /// Random circuits over the two-qubit fixture.
    fn random_circuit(rng: &mut impl Rng) -> String {
        let mut stmts = Vec::new();
        let mut results = Vec::new();
        for k in 0..rng.random_range(0..12) {
            let q = rng.random_range(0..2);
            stmts.push(match rng.random_range(0..6) {
                0 | 1 => format!(r#"{{"gate":"X90","qubit":"Q{q}"}}"#),
                2 => format!(r#"{{"virtual_z":"Q{q}","phase":{}}}"#, rng.random_range(-3.0..3.0)),
                3 => {
                    results.push(format!("r{k}"));
                    format!(r#"{{"measure":"Q{q}","result":"r{k}"}}"#)
                }
                4 if !results.is_empty() => format!(
                    r#"{{"if":"{}","then":[{{"gate":"X90","qubit":"Q{q}"}}],"else":[{{"delay":8,"qubits":["Q{q}"]}}]}}"#,
                    results[rng.random_range(0..results.len())]
                ),
                _ => r#"{"gate":"CZ","qubits":["Q0","Q1"]}"#.to_string(),
            });
        }
        format!("[{}]", stmts.join(","))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn binary_listing_roundtrip(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let src = random_circuit(&mut rng);
            let cal = CalibrationSet::from_json(CAL).unwrap();
            let hw = HardwareConfig::from_json(HW).unwrap();
            let prog = match compile(&src, &cal, &hw) {
                Ok(p) => p,
                // Out-of-order result use is a legitimate rejection.
                Err(e) => {
                    let m = e.to_string();
                    prop_assert!(m.contains("measurement order") || m.contains("earlier branches"), "{}", m);
                    return Ok(());
                }
            };
            let a = assemble(&prog, &hw.resolve().unwrap()).unwrap();
            let bin = a.binary().unwrap();
            let back = parse_listing(&disassemble(&bin).unwrap()).unwrap();
            prop_assert_eq!(back.to_bytes().unwrap(), bin);
            let again = assemble(&prog, &hw.resolve().unwrap()).unwrap();
            prop_assert_eq!(again.binary().unwrap(), a.binary().unwrap());
            for img in &a.images {
                let parsed = EnvelopeImage::from_bytes(&img.channel, &img.to_bytes()).unwrap();
                prop_assert_eq!(&parsed.entries, &img.entries);
            }
        }
    }
}
