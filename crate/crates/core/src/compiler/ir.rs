// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! Pulse-level intermediate representation and gate resolution.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::calibration::{CalibrationSet, PulseTemplate};
use super::circuit::{CircuitProgram, Statement, StmtKind};
use super::hardware::{Channel, ChannelKind, ChannelMap};
use super::{CompileError, Pos};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrPulse {
    pub qubit: String,
    pub channel: String,
    pub channel_id: u16,
    pub core: u16,
    pub kind: ChannelKind,
    pub freq: f64,
    pub phase: f64,
    pub amp: f64,
    /// Envelope name; `None` for demod windows.
    pub env: Option<String>,
    /// Output samples.
    pub length: u32,
    /// qclk ticks.
    pub duration: u64,
    pub start: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureOp {
    pub qubit: String,
    pub result: String,
    pub fproc_id: u16,
    /// Index of this measurement among all measurements of `qubit`.
    pub ordinal: usize,
    pub tone: IrPulse,
    pub window: IrPulse,
    /// Ticks from tone start to window start.
    pub delay: u64,
}

impl MeasureOp {
    pub fn start(&self) -> Option<u64> {
        self.tone.start
    }

    /// Window end, once scheduled.
    pub fn end(&self) -> Option<u64> {
        self.window.start.map(|s| s + self.window.duration)
    }
}

/// How one core evaluates a condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CondMode {
    /// `BranchFproc` straight off the mailbox.
    Fproc,
    /// `ReadFproc` into a register, then `BranchAlu`.
    ReadReg(u8),
    /// The value is already in a register.
    Reg(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CondPlan {
    pub fproc_id: u16,
    /// Older values to discard first.
    pub drains: usize,
    pub mode: CondMode,
}

impl CondPlan {
    /// Instructions issued before the first arm instruction.
    pub fn ops(&self) -> usize {
        self.drains
            + match self.mode {
                CondMode::Fproc | CondMode::Reg(_) => 1,
                CondMode::ReadReg(_) => 2,
            }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfElse {
    pub pos: Pos,
    pub result: String,
    pub source_qubit: String,
    pub fproc_id: u16,
    pub ordinal: usize,
    pub expected: i32,
    pub then_body: Vec<IrNode>,
    pub else_body: Vec<IrNode>,
    /// Cores that execute the branch.
    pub cores: BTreeSet<u16>,
    pub start: Option<u64>,
    /// Common end of both arms.
    pub end: Option<u64>,
    pub plans: BTreeMap<u16, CondPlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum IrNode {
    Pulse(IrPulse),
    VirtualZ { qubit: String, phase: f64 },
    Measure(MeasureOp),
    IfElse(IfElse),
    Barrier { qubits: Vec<String> },
    Delay { qubits: Vec<String>, ticks: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultInfo {
    pub name: String,
    pub qubit: String,
    pub fproc_id: u16,
    pub ordinal: usize,
}

/// Qubits and channels owned by one core.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CoreResources {
    pub qubits: Vec<String>,
    pub channels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrProgram {
    pub nodes: Vec<IrNode>,
    pub results: Vec<ResultInfo>,
    pub qubits: Vec<String>,
    pub cores: BTreeMap<u16, CoreResources>,
    pub dispatch_offset: u64,
}

impl IrProgram {
    pub fn core_of(&self, qubit: &str) -> Option<u16> {
        self.cores
            .iter()
            .find(|(_, r)| r.qubits.iter().any(|q| q == qubit))
            .map(|(c, _)| *c)
    }

    /// All pulses including measurement tones/windows and both arms, depth first.
    pub fn pulses(&self) -> Vec<&IrPulse> {
        fn walk<'a>(nodes: &'a [IrNode], out: &mut Vec<&'a IrPulse>) {
            for n in nodes {
                match n {
                    IrNode::Pulse(p) => out.push(p),
                    IrNode::Measure(m) => {
                        out.push(&m.tone);
                        out.push(&m.window);
                    }
                    IrNode::IfElse(b) => {
                        walk(&b.then_body, out);
                        walk(&b.else_body, out);
                    }
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.nodes, &mut out);
        out
    }
}

struct Resolver<'a> {
    cal: &'a CalibrationSet,
    map: &'a ChannelMap,
    results: Vec<ResultInfo>,
    measure_counts: BTreeMap<String, usize>,
}

fn err(pos: Pos, message: String) -> CompileError {
    CompileError::Resolve { pos, message }
}

impl<'a> Resolver<'a> {
    fn qubit(&self, pos: Pos, q: &str) -> Result<(), CompileError> {
        if self.cal.qubit(q).is_none() || self.map.core_of(q).is_none() {
            return Err(err(pos, format!("unknown qubit {q}")));
        }
        Ok(())
    }

    fn channel_pulse(
        &self,
        ch: &Channel,
        freq: f64,
        phase: f64,
        amp: f64,
        env: Option<String>,
        length: u32,
    ) -> IrPulse {
        IrPulse {
            qubit: ch.qubit.clone(),
            channel: ch.name.clone(),
            channel_id: ch.id,
            core: ch.core,
            kind: ch.kind,
            freq,
            phase,
            amp,
            env,
            length,
            duration: ch.ticks(length),
            start: None,
        }
    }

    fn template(&self, pos: Pos, qubit: &str, t: &PulseTemplate) -> Result<IrPulse, CompileError> {
        let qcal = self.cal.qubit(qubit).expect("qubit checked");
        let (ch, default_freq) = match t.channel.as_str() {
            "drive" => (
                self.map.qubit_channel(qubit, ChannelKind::QubitDrive),
                qcal.drive_freq,
            ),
            "readout" => (
                self.map.qubit_channel(qubit, ChannelKind::ReadoutDrive),
                qcal.readout_freq,
            ),
            name => (self.map.channel(name), qcal.drive_freq),
        };
        let ch = ch.ok_or_else(|| {
            err(pos, format!("no channel {} for qubit {qubit}", t.channel))
        })?;
        if !ch.kind.is_output() {
            return Err(err(pos, format!("channel {} cannot play pulses", ch.name)));
        }
        let env_len = self.cal.envelopes[&t.env].len() as u32;
        Ok(self.channel_pulse(
            ch,
            t.freq.unwrap_or(default_freq),
            t.phase,
            t.amp,
            Some(t.env.clone()),
            t.length.unwrap_or(env_len),
        ))
    }

    fn block(&mut self, stmts: &[Statement], in_arm: bool) -> Result<Vec<IrNode>, CompileError> {
        let mut out = Vec::new();
        for s in stmts {
            self.statement(s, in_arm, &mut out)?;
        }
        Ok(out)
    }

    fn statement(&mut self, s: &Statement, in_arm: bool, out: &mut Vec<IrNode>) -> Result<(), CompileError> {
        let pos = s.pos;
        match &s.kind {
            StmtKind::Gate { name, qubits } => {
                for q in qubits {
                    self.qubit(pos, q)?;
                }
                if let [q] = qubits.as_slice() {
                    let templates = self.cal.qubit(q).unwrap().gates.get(name).ok_or_else(|| {
                        err(pos, format!("no calibration for gate {name} on {q}"))
                    })?;
                    for t in templates {
                        out.push(IrNode::Pulse(self.template(pos, q, t)?));
                    }
                } else {
                    let g = self.cal.multi_gate(name, qubits).ok_or_else(|| {
                        err(pos, format!("no calibration for gate {name} on {}", qubits.join(",")))
                    })?;
                    out.push(IrNode::Barrier {
                        qubits: qubits.clone(),
                    });
                    for t in &g.pulses {
                        let q = t.qubit.as_deref().expect("validated");
                        out.push(IrNode::Pulse(self.template(pos, q, t)?));
                    }
                }
            }
            StmtKind::RawPulse {
                dest,
                freq,
                phase,
                amp,
                env,
                length,
            } => {
                let ch = self
                    .map
                    .channel(dest)
                    .ok_or_else(|| err(pos, format!("unknown channel {dest}")))?;
                if !ch.kind.is_output() {
                    return Err(err(pos, format!("channel {dest} cannot play pulses")));
                }
                let spec = self
                    .cal
                    .envelopes
                    .get(env)
                    .ok_or_else(|| err(pos, format!("unknown envelope {env}")))?;
                let length = length.unwrap_or(spec.len() as u32);
                if length == 0 || length as usize > spec.len() {
                    return Err(err(pos, format!("length {length} exceeds envelope {env}")));
                }
                if !(0.0..1.0).contains(amp) {
                    return Err(err(pos, format!("amplitude {amp} outside [0, 1)")));
                }
                out.push(IrNode::Pulse(self.channel_pulse(
                    ch,
                    *freq,
                    *phase,
                    *amp,
                    Some(env.clone()),
                    length,
                )));
            }
            StmtKind::VirtualZ { qubit, phase } => {
                self.qubit(pos, qubit)?;
                out.push(IrNode::VirtualZ {
                    qubit: qubit.clone(),
                    phase: *phase,
                });
            }
            StmtKind::Measure { qubit, result } => {
                self.qubit(pos, qubit)?;
                if in_arm {
                    return Err(err(
                        pos,
                        "measurement inside a conditional arm is not supported".into(),
                    ));
                }
                if self.results.iter().any(|r| &r.name == result) {
                    return Err(err(pos, format!("result {result} is already defined")));
                }
                let qcal = self.cal.qubit(qubit).unwrap();
                let ro = &qcal.readout;
                let tone_ch = self.map.qubit_channel(qubit, ChannelKind::ReadoutDrive).unwrap();
                let demod = self.map.qubit_channel(qubit, ChannelKind::ReadoutDemod).unwrap();
                let fproc_id = demod.fproc_id.expect("demod channels carry an fproc id");
                let count = self.measure_counts.entry(qubit.clone()).or_default();
                let ordinal = *count;
                *count += 1;
                self.results.push(ResultInfo {
                    name: result.clone(),
                    qubit: qubit.clone(),
                    fproc_id,
                    ordinal,
                });
                let tone_len = self.cal.envelopes[&ro.env].len() as u32;
                out.push(IrNode::Measure(MeasureOp {
                    qubit: qubit.clone(),
                    result: result.clone(),
                    fproc_id,
                    ordinal,
                    tone: self.channel_pulse(
                        tone_ch,
                        qcal.readout_freq,
                        ro.phase,
                        ro.amp,
                        Some(ro.env.clone()),
                        tone_len,
                    ),
                    window: self.channel_pulse(demod, qcal.readout_freq, 0.0, 0.0, None, ro.window),
                    delay: ro.delay,
                }));
            }
            StmtKind::IfElse {
                result,
                expected,
                then_body,
                else_body,
            } => {
                let info = self
                    .results
                    .iter()
                    .find(|r| &r.name == result)
                    .cloned()
                    .ok_or_else(|| err(pos, format!("undefined result \"{result}\"")))?;
                let then_body = self.block(then_body, true)?;
                let else_body = self.block(else_body, true)?;
                let mut touched = BTreeSet::new();
                collect_qubits(&then_body, &mut touched);
                collect_qubits(&else_body, &mut touched);
                let cores = touched
                    .iter()
                    .filter_map(|q| self.map.core_of(q))
                    .collect();
                out.push(IrNode::IfElse(IfElse {
                    pos,
                    result: result.clone(),
                    source_qubit: info.qubit,
                    fproc_id: info.fproc_id,
                    ordinal: info.ordinal,
                    expected: *expected,
                    then_body,
                    else_body,
                    cores,
                    start: None,
                    end: None,
                    plans: BTreeMap::new(),
                }));
            }
            StmtKind::Barrier { qubits } => {
                for q in qubits {
                    self.qubit(pos, q)?;
                }
                let qubits = if qubits.is_empty() {
                    self.map.qubits.clone()
                } else {
                    qubits.clone()
                };
                out.push(IrNode::Barrier { qubits });
            }
            StmtKind::Delay { qubits, ticks } => {
                for q in qubits {
                    self.qubit(pos, q)?;
                }
                out.push(IrNode::Delay {
                    qubits: qubits.clone(),
                    ticks: *ticks,
                });
            }
        }
        Ok(())
    }
}

/// Qubits a block touches, recursively.
pub fn collect_qubits(nodes: &[IrNode], out: &mut BTreeSet<String>) {
    for n in nodes {
        match n {
            IrNode::Pulse(p) => {
                out.insert(p.qubit.clone());
            }
            IrNode::Measure(m) => {
                out.insert(m.qubit.clone());
            }
            IrNode::VirtualZ { qubit, .. } => {
                out.insert(qubit.clone());
            }
            IrNode::IfElse(b) => {
                collect_qubits(&b.then_body, out);
                collect_qubits(&b.else_body, out);
            }
            IrNode::Barrier { qubits } | IrNode::Delay { qubits, .. } => {
                out.extend(qubits.iter().cloned());
            }
        }
    }
}

/// Replaces gates and measurements with calibrated pulses.
pub fn resolve_gates(
    prog: &CircuitProgram,
    cal: &CalibrationSet,
    map: &ChannelMap,
) -> Result<IrProgram, CompileError> {
    let mut r = Resolver {
        cal,
        map,
        results: Vec::new(),
        measure_counts: BTreeMap::new(),
    };
    let nodes = r.block(&prog.statements, false)?;
    let mut cores: BTreeMap<u16, CoreResources> = BTreeMap::new();
    for q in &map.qubits {
        cores
            .entry(map.core_of(q).unwrap())
            .or_default()
            .qubits
            .push(q.clone());
    }
    for c in &map.channels {
        cores.entry(c.core).or_default().channels.push(c.name.clone());
    }
    Ok(IrProgram {
        nodes,
        results: r.results,
        qubits: map.qubits.clone(),
        cores,
        dispatch_offset: map.dispatch_offset,
    })
}
