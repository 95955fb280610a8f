// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! Per-core pulse-level programs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::calibration::CalibrationSet;
use super::hardware::ChannelMap;
use super::ir::{CondMode, IrNode, IrProgram, IrPulse, ResultInfo};
use super::CompileError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseOp {
    /// Scheduled IR time in qclk ticks.
    pub time: u64,
    pub channel: String,
    pub channel_id: u16,
    pub freq: f64,
    pub phase: f64,
    pub amp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<String>,
    pub length: u32,
}

impl PulseOp {
    fn from_ir(p: &IrPulse) -> Result<Self, CompileError> {
        Ok(PulseOp {
            time: p.start.ok_or_else(|| {
                CompileError::Split(format!("pulse on {} was not scheduled", p.channel))
            })?,
            channel: p.channel.clone(),
            channel_id: p.channel_id,
            freq: p.freq,
            phase: p.phase,
            amp: p.amp,
            env: p.env.clone(),
            length: p.length,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    /// Pop the next value of this fproc stream and compare.
    Fproc(u16),
    /// Compare a register.
    Reg(u8),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoreOp {
    Sync { barrier: u8, mask: u64 },
    Pulse(PulseOp),
    /// Pop one value from an fproc stream into `reg` (0 discards).
    Read { fproc_id: u16, reg: u8 },
    Branch {
        cond: Condition,
        expected: i32,
        start: u64,
        end: u64,
        then_ops: Vec<CoreOp>,
        else_ops: Vec<CoreOp>,
    },
}

impl CoreOp {
    fn time(&self) -> u64 {
        match self {
            CoreOp::Sync { .. } | CoreOp::Read { .. } => 0,
            CoreOp::Pulse(p) => p.time,
            CoreOp::Branch { start, .. } => *start,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreProgram {
    pub core: u16,
    pub ops: Vec<CoreOp>,
}

impl CoreProgram {
    /// Every pulse in the program, both arms included, depth first.
    pub fn pulses(&self) -> Vec<&PulseOp> {
        fn walk<'a>(ops: &'a [CoreOp], out: &mut Vec<&'a PulseOp>) {
            for op in ops {
                match op {
                    CoreOp::Pulse(p) => out.push(p),
                    CoreOp::Branch {
                        then_ops, else_ops, ..
                    } => {
                        walk(then_ops, out);
                        walk(else_ops, out);
                    }
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.ops, &mut out);
        out
    }
}

/// Output of the compiler: per-core programs plus the envelope shapes they use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseProgram {
    pub cores: Vec<CoreProgram>,
    /// Unit-scale `[i, q]` samples by envelope name.
    pub envelopes: BTreeMap<String, Vec<[f64; 2]>>,
    pub results: Vec<ResultInfo>,
}

impl PulseProgram {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pulse programs serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, CompileError> {
        serde_json::from_str(text).map_err(|e| CompileError::Split(format!("pulse program: {e}")))
    }

    /// Human-readable schedule: one line per op, times in qclk ticks.
    pub fn listing(&self) -> String {
        fn ops(out: &mut String, list: &[CoreOp], depth: usize) {
            let pad = "  ".repeat(depth);
            for op in list {
                match op {
                    CoreOp::Sync { barrier, mask } => {
                        out.push_str(&format!("{pad}         sync barrier {barrier} mask {mask:#x}\n"))
                    }
                    CoreOp::Read { fproc_id, reg } => {
                        out.push_str(&format!("{pad}         read fproc {fproc_id} -> r{reg}\n"))
                    }
                    CoreOp::Pulse(p) => out.push_str(&format!(
                        "{pad}{:>8} {} freq {} Hz phase {:.6} amp {:.4} env {} len {}\n",
                        p.time,
                        p.channel,
                        p.freq,
                        p.phase,
                        p.amp,
                        p.env.as_deref().unwrap_or("-"),
                        p.length
                    )),
                    CoreOp::Branch {
                        cond,
                        expected,
                        start,
                        end,
                        then_ops,
                        else_ops,
                    } => {
                        let c = match cond {
                            Condition::Fproc(f) => format!("fproc {f}"),
                            Condition::Reg(r) => format!("r{r}"),
                        };
                        out.push_str(&format!("{pad}{start:>8} if {c} == {expected} until {end}\n"));
                        ops(out, then_ops, depth + 1);
                        if !else_ops.is_empty() {
                            out.push_str(&format!("{pad}         else\n"));
                            ops(out, else_ops, depth + 1);
                        }
                    }
                }
            }
        }
        let mut out = String::new();
        for c in &self.cores {
            out.push_str(&format!("core {}\n", c.core));
            ops(&mut out, &c.ops, 0);
        }
        if !self.results.is_empty() {
            out.push_str("results\n");
            for r in &self.results {
                out.push_str(&format!("  {} = {} #{} (fproc {})\n", r.name, r.qubit, r.ordinal, r.fproc_id));
            }
        }
        out
    }
}

/// Keyed ops for one core; keys sort the stream by time.
type Stream = Vec<(u64, CoreOp)>;

fn push(streams: &mut BTreeMap<u16, Stream>, core: u16, op: CoreOp) {
    streams.entry(core).or_default().push((op.time(), op));
}

fn lower(nodes: &[IrNode], streams: &mut BTreeMap<u16, Stream>) -> Result<(), CompileError> {
    for n in nodes {
        match n {
            IrNode::Pulse(p) => push(streams, p.core, CoreOp::Pulse(PulseOp::from_ir(p)?)),
            IrNode::Measure(m) => {
                push(streams, m.tone.core, CoreOp::Pulse(PulseOp::from_ir(&m.tone)?));
                push(streams, m.window.core, CoreOp::Pulse(PulseOp::from_ir(&m.window)?));
            }
            IrNode::IfElse(b) => {
                let (Some(start), Some(end)) = (b.start, b.end) else {
                    return Err(CompileError::Split("conditional was not scheduled".into()));
                };
                let mut then_streams = BTreeMap::new();
                let mut else_streams = BTreeMap::new();
                lower(&b.then_body, &mut then_streams)?;
                lower(&b.else_body, &mut else_streams)?;
                for &core in &b.cores {
                    let plan = b.plans.get(&core).ok_or_else(|| {
                        CompileError::Split(format!("no condition plan for core {core}"))
                    })?;
                    let stream = streams.entry(core).or_default();
                    // Reads are keyed with the branch so a stable sort keeps them together.
                    for _ in 0..plan.drains {
                        stream.push((start, CoreOp::Read { fproc_id: plan.fproc_id, reg: 0 }));
                    }
                    let cond = match plan.mode {
                        CondMode::Fproc => Condition::Fproc(plan.fproc_id),
                        CondMode::ReadReg(r) => {
                            stream.push((start, CoreOp::Read { fproc_id: plan.fproc_id, reg: r }));
                            Condition::Reg(r)
                        }
                        CondMode::Reg(r) => Condition::Reg(r),
                    };
                    let take = |s: &mut BTreeMap<u16, Stream>| finish(s.remove(&core).unwrap_or_default());
                    stream.push((
                        start,
                        CoreOp::Branch {
                            cond,
                            expected: b.expected,
                            start,
                            end,
                            then_ops: take(&mut then_streams),
                            else_ops: take(&mut else_streams),
                        },
                    ));
                }
                if let Some(core) = then_streams.keys().chain(else_streams.keys()).next() {
                    return Err(CompileError::Split(format!(
                        "conditional arm has operations on core {core}, which does not branch"
                    )));
                }
            }
            IrNode::VirtualZ { .. } | IrNode::Barrier { .. } | IrNode::Delay { .. } => {}
        }
    }
    Ok(())
}

fn finish(mut stream: Stream) -> Vec<CoreOp> {
    stream.sort_by_key(|(t, _)| *t);
    stream.into_iter().map(|(_, op)| op).collect()
}

/// Distributes the scheduled IR over cores. Every core of the hardware map
/// gets a program that starts with a sync over all cores.
pub fn split_per_core(
    ir: &IrProgram,
    cal: &CalibrationSet,
    map: &ChannelMap,
) -> Result<PulseProgram, CompileError> {
    let mut streams = BTreeMap::new();
    lower(&ir.nodes, &mut streams)?;
    let cores = map.cores();
    for core in streams.keys() {
        if !cores.contains(core) {
            return Err(CompileError::Split(format!("core {core} is not in the mapping")));
        }
    }
    let mask = cores.iter().fold(0u64, |m, &c| m | (1u64 << c));
    let mut programs = Vec::new();
    for &core in &cores {
        let mut ops = vec![CoreOp::Sync { barrier: 0, mask }];
        ops.extend(finish(streams.remove(&core).unwrap_or_default()));
        programs.push(CoreProgram { core, ops });
    }
    let mut envelopes = BTreeMap::new();
    for p in ir.pulses() {
        if let Some(name) = &p.env {
            if !envelopes.contains_key(name) {
                let samples = cal.envelope_samples(name).ok_or_else(|| {
                    CompileError::Split(format!("unknown envelope {name}"))
                })?;
                envelopes.insert(name.clone(), samples.iter().map(|s| [s.re, s.im]).collect());
            }
        }
    }
    Ok(PulseProgram {
        cores: programs,
        envelopes,
        results: ir.results.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::hardware::HardwareConfig;
    use crate::compiler::ir::tests::{fixtures, resolve, CAL, HW};
    use crate::compiler::{compile, schedule};
    use proptest::prelude::*;

    fn compiled(src: &str) -> PulseProgram {
        let cal = CalibrationSet::from_json(CAL).unwrap();
        let hw = HardwareConfig::from_json(HW).unwrap();
        compile(src, &cal, &hw).unwrap()
    }

    #[test]
    fn leading_sync_and_one_program_per_core() {
        let p = compiled(r#"[{"gate":"X90","qubit":"Q0"}]"#);
        assert_eq!(p.cores.len(), 2);
        assert_eq!(p.cores[0].ops[0], CoreOp::Sync { barrier: 0, mask: 0b11 });
        assert_eq!(p.cores[1].ops.len(), 1);
        assert!(p.envelopes.contains_key("x90"));
    }

    #[test]
    fn single_qubit_stream_matches_ir() {
        let hw = HardwareConfig::from_json(
            r#"{"channels": [
  {"name": "Q0.drive", "kind": "qubit-drive", "qubit": "Q0", "dac": 0, "sample_rate": 8e9},
  {"name": "Q0.rdrv", "kind": "readout-drive", "qubit": "Q0", "dac": 4, "sample_rate": 2e9},
  {"name": "Q0.rdlo", "kind": "readout-demod", "qubit": "Q0", "adc": 0, "sample_rate": 2e9}]}"#,
        )
        .unwrap();
        let mut cal = CalibrationSet::from_json(CAL).unwrap();
        cal.qubits.remove("Q1");
        cal.gates.clear();
        let src = r#"[{"gate":"X90","qubit":"Q0"},{"gate":"Y90","qubit":"Q0"}]"#;
        let p = compile(src, &cal, &hw).unwrap();
        assert_eq!(p.cores.len(), 1);
        let times: Vec<_> = p.cores[0].pulses().iter().map(|p| (p.time, p.phase)).collect();
        assert_eq!(times, vec![(0, 0.25), (16, std::f64::consts::FRAC_PI_2)]);
    }

    #[test]
    fn remote_condition_becomes_fproc_branch() {
        let p = compiled(
            r#"[{"gate":"X90","qubit":"Q0"},{"measure":"Q0","result":"m0"},
                {"if":"m0","then":[{"gate":"X90","qubit":"Q1"},{"gate":"X90","qubit":"Q1"}]},
                {"measure":"Q0","result":"a"},{"measure":"Q1","result":"b"}]"#,
        );
        let core1 = &p.cores[1].ops;
        let CoreOp::Branch { cond, expected, then_ops, else_ops, .. } = &core1[1] else {
            panic!("{core1:?}")
        };
        assert_eq!(*cond, Condition::Fproc(0));
        assert_eq!(*expected, 1);
        assert_eq!(then_ops.len(), 2);
        assert!(else_ops.is_empty());
        assert!(p.cores[0].ops.iter().all(|op| !matches!(op, CoreOp::Branch { .. })));
    }

    #[test]
    fn two_qubits_on_one_core_merge_by_time() {
        let mut hw = HardwareConfig::from_json(HW).unwrap();
        hw.qubit_to_core = Some([("Q0".into(), 0), ("Q1".into(), 0)].into());
        let cal = CalibrationSet::from_json(CAL).unwrap();
        let src = r#"[{"gate":"X90","qubit":"Q0"},{"gate":"X90","qubit":"Q0"},{"gate":"X90","qubit":"Q1"}]"#;
        let p = compile(src, &cal, &hw).unwrap();
        assert_eq!(p.cores.len(), 1);
        let got: Vec<_> = p.cores[0].pulses().iter().map(|p| (p.time, p.channel.clone())).collect();
        // Merge-by-time oracle over the scheduled IR.
        let map = hw.resolve().unwrap();
        let ir = schedule(
            crate::compiler::resolve_gates(&crate::compiler::parse_circuit(src).unwrap(), &cal, &map).unwrap(),
            &cal,
        )
        .unwrap();
        let mut oracle: Vec<_> = ir.pulses().iter().map(|p| (p.start.unwrap(), p.channel.clone())).collect();
        oracle.sort();
        assert_eq!(got, oracle);
        // Pulses on one core keep at least 4 ticks between them.
        for w in got.windows(2) {
            assert!(w[1].0 >= w[0].0 + 4);
        }
    }

    #[test]
    fn json_roundtrip() {
        let p = compiled(r#"[{"measure":"Q0","result":"m"},{"if":"m","then":[{"gate":"X90","qubit":"Q0"}]}]"#);
        assert_eq!(PulseProgram::from_json(&p.to_json()).unwrap(), p);
    }

    #[test]
    fn listing_shows_every_op() {
        let p = compiled(r#"[{"gate":"X90","qubit":"Q0"},{"measure":"Q0","result":"m"},{"if":"m","then":[{"gate":"X90","qubit":"Q1"}],"else":[{"gate":"X90","qubit":"Q0"}]}]"#);
        let text = p.listing();
        assert!(text.starts_with("core 0\n         sync barrier 0 mask 0x3\n"));
        assert!(text.contains("       0 Q0.drive freq 3550000000 Hz phase 0.250000 amp 0.5000 env x90 len 256\n"));
        assert!(text.contains(" if fproc 0 == 1 until "));
        assert!(text.contains("else\n"));
        assert!(text.ends_with("results\n  m = Q0 #0 (fproc 0)\n"));
        let lines = text.lines().filter(|l| l.contains(" freq ")).count();
        assert_eq!(lines, p.cores.iter().map(|c| c.pulses().len()).sum::<usize>());
    }

    fn multiset(ir: &IrProgram) -> Vec<(String, u64, u64, u64, u64, u32)> {
        let mut v: Vec<_> = ir
            .pulses()
            .iter()
            .map(|p| (p.channel.clone(), p.start.unwrap(), p.freq.to_bits(), p.phase.to_bits(), p.amp.to_bits(), p.length))
            .collect();
        v.sort();
        v
    }

    proptest! {
        #[test]
        fn split_preserves_content(ops in proptest::collection::vec((0u8..6, 0u8..2), 0..20)) {
            let (cal, map) = fixtures();
            let mut stmts = vec![r#"{"measure":"Q0","result":"m"}"#.to_string()];
            for (k, q) in ops {
                stmts.push(match k {
                    0 | 1 => format!(r#"{{"gate":"X90","qubit":"Q{q}"}}"#),
                    2 => format!(r#"{{"virtual_z":"Q{q}","phase":0.7}}"#),
                    3 => format!(r#"{{"measure":"Q1","result":"r{}"}}"#, stmts.len()),
                    _ => format!(r#"{{"if":"m","then":[{{"gate":"X90","qubit":"Q{q}"}}]}}"#),
                });
            }
            let src = format!("[{}]", stmts.join(","));
            let ir = schedule(crate::compiler::apply_virtual_z(resolve(&src).unwrap()).unwrap(), &cal).unwrap();
            let prog = split_per_core(&ir, &cal, &map).unwrap();
            let mut got: Vec<_> = prog
                .cores
                .iter()
                .flat_map(|c| c.pulses())
                .map(|p| (p.channel.clone(), p.time, p.freq.to_bits(), p.phase.to_bits(), p.amp.to_bits(), p.length))
                .collect();
            got.sort();
            prop_assert_eq!(got, multiset(&ir));
        }
    }
}
