// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! ASAP list scheduling in qclk ticks.
//!
//! Resources are qubits and channels. On top of resource readiness each core
//! has an issue constraint mirroring the processor: a pulse instruction needs
//! 4 cycles after the previous instruction retires, and each function-processor
//! read or branch takes 5. A conditional occupies every resource of every core
//! it runs on from its start until the common end of both arms.

use std::collections::BTreeMap;

use super::calibration::CalibrationSet;
use super::ir::{CondMode, CondPlan, CoreResources, IfElse, IrNode, IrProgram, IrPulse, MeasureOp};
use super::CompileError;
use crate::isa::NUM_REGISTERS;

/// Cycles from retirement of one instruction until a following pulse may fire.
pub const PULSE_ISSUE: i64 = 4;
/// Retirement latency of a function-processor read or branch with data ready.
pub const FPROC_OP: i64 = 5;
/// Retirement latency of the jump closing an else arm.
pub const JUMP: i64 = 4;

fn qkey(q: &str) -> String {
    format!("q:{q}")
}

fn ckey(c: &str) -> String {
    format!("c:{c}")
}

#[derive(Debug, Clone, Default)]
struct Timeline {
    ready: BTreeMap<String, u64>,
    /// IR time at which each core's last instruction retires (worst path).
    issue_free: BTreeMap<u16, i64>,
    /// Values each core has popped per fproc stream; `None` when path-dependent.
    cursors: BTreeMap<(u16, u16), Option<usize>>,
    /// Results held in a register on every path.
    regs: BTreeMap<(u16, String), u8>,
}

impl Timeline {
    fn ready(&self, key: &str) -> u64 {
        self.ready.get(key).copied().unwrap_or(0)
    }

    fn earliest_pulse(&self, core: u16) -> u64 {
        (self.issue_free[&core] + PULSE_ISSUE).max(0) as u64
    }
}

struct Scheduler<'a> {
    cores: &'a BTreeMap<u16, CoreResources>,
    feedback_latency: u64,
    avail: BTreeMap<String, u64>,
    uses: BTreeMap<(u16, String), usize>,
    next_reg: BTreeMap<u16, u8>,
}

fn count_uses(nodes: &[IrNode], uses: &mut BTreeMap<(u16, String), usize>) {
    for n in nodes {
        if let IrNode::IfElse(b) = n {
            for &c in &b.cores {
                *uses.entry((c, b.result.clone())).or_default() += 1;
            }
            count_uses(&b.then_body, uses);
            count_uses(&b.else_body, uses);
        }
    }
}

impl<'a> Scheduler<'a> {
    fn core_keys(&self, core: u16) -> Vec<String> {
        let r = &self.cores[&core];
        r.qubits
            .iter()
            .map(|q| qkey(q))
            .chain(r.channels.iter().map(|c| ckey(c)))
            .collect()
    }

    fn pulse(&self, tl: &mut Timeline, p: &mut IrPulse) {
        let (qk, ck) = (qkey(&p.qubit), ckey(&p.channel));
        let start = tl
            .ready(&qk)
            .max(tl.ready(&ck))
            .max(tl.earliest_pulse(p.core));
        p.start = Some(start);
        tl.ready.insert(qk, start + p.duration);
        tl.ready.insert(ck, start + p.duration);
        tl.issue_free.insert(p.core, start as i64);
    }

    fn measure(&mut self, tl: &mut Timeline, m: &mut MeasureOp) {
        let core = m.tone.core;
        let (qk, tk, wk) = (qkey(&m.qubit), ckey(&m.tone.channel), ckey(&m.window.channel));
        let t = tl
            .ready(&qk)
            .max(tl.ready(&tk))
            .max(tl.ready(&wk).saturating_sub(m.delay))
            .max(tl.earliest_pulse(core));
        let w = t + m.delay;
        let end = w + m.window.duration;
        m.tone.start = Some(t);
        m.window.start = Some(w);
        tl.ready.insert(tk, t + m.tone.duration);
        tl.ready.insert(wk, end);
        tl.ready.insert(qk, end);
        tl.issue_free.insert(core, w as i64);
        self.avail.insert(m.result.clone(), end + self.feedback_latency);
    }

    fn plan(&mut self, tl: &mut Timeline, b: &IfElse, core: u16) -> Result<CondPlan, CompileError> {
        let fail = |message: String| CompileError::Resolve { pos: b.pos, message };
        if let Some(&reg) = tl.regs.get(&(core, b.result.clone())) {
            return Ok(CondPlan {
                fproc_id: b.fproc_id,
                drains: 0,
                mode: CondMode::Reg(reg),
            });
        }
        let cursor = tl
            .cursors
            .get(&(core, b.fproc_id))
            .copied()
            .unwrap_or(Some(0))
            .ok_or_else(|| {
                fail(format!(
                    "core {core}: position in the result stream of {} depends on earlier branches",
                    b.source_qubit
                ))
            })?;
        if cursor > b.ordinal {
            return Err(fail(format!(
                "core {core}: result {} was already passed; use results of {} in measurement order",
                b.result, b.source_qubit
            )));
        }
        let mode = if self.uses[&(core, b.result.clone())] > 1 {
            let next = self.next_reg.entry(core).or_insert(1);
            if *next as usize >= NUM_REGISTERS {
                return Err(fail(format!("core {core}: out of registers for results")));
            }
            let reg = *next;
            *next += 1;
            tl.regs.insert((core, b.result.clone()), reg);
            CondMode::ReadReg(reg)
        } else {
            CondMode::Fproc
        };
        tl.cursors.insert((core, b.fproc_id), Some(b.ordinal + 1));
        Ok(CondPlan {
            fproc_id: b.fproc_id,
            drains: b.ordinal - cursor,
            mode,
        })
    }

    fn if_else(&mut self, tl: &mut Timeline, b: &mut IfElse) -> Result<(), CompileError> {
        let mut start = self.avail[&b.result];
        for &core in &b.cores {
            let plan = self.plan(tl, b, core)?;
            let issue = tl.issue_free[&core] + FPROC_OP * plan.ops() as i64 + PULSE_ISSUE;
            start = start.max(issue.max(0) as u64);
            for k in self.core_keys(core) {
                start = start.max(tl.ready(&k));
            }
            b.plans.insert(core, plan);
        }
        for &core in &b.cores {
            for k in self.core_keys(core) {
                tl.ready.insert(k, start);
            }
            tl.issue_free.insert(core, start as i64 - PULSE_ISSUE);
        }
        let mut then_tl = tl.clone();
        let mut else_tl = tl.clone();
        self.block(&mut then_tl, &mut b.then_body)?;
        self.block(&mut else_tl, &mut b.else_body)?;
        let mut end = start;
        for &core in &b.cores {
            for k in self.core_keys(core) {
                end = end.max(then_tl.ready(&k)).max(else_tl.ready(&k));
            }
        }
        for &core in &b.cores {
            for k in self.core_keys(core) {
                tl.ready.insert(k, end);
            }
            let joined = then_tl.issue_free[&core].max(else_tl.issue_free[&core] + JUMP);
            tl.issue_free.insert(core, joined);
        }
        let keys: Vec<_> = then_tl
            .cursors
            .keys()
            .chain(else_tl.cursors.keys())
            .copied()
            .collect();
        for k in keys {
            let (t, e) = (
                then_tl.cursors.get(&k).copied().unwrap_or(Some(0)),
                else_tl.cursors.get(&k).copied().unwrap_or(Some(0)),
            );
            tl.cursors.insert(k, if t == e { t } else { None });
        }
        tl.regs = then_tl
            .regs
            .into_iter()
            .filter(|(k, v)| else_tl.regs.get(k) == Some(v))
            .collect();
        b.start = Some(start);
        b.end = Some(end);
        Ok(())
    }

    fn block(&mut self, tl: &mut Timeline, nodes: &mut [IrNode]) -> Result<(), CompileError> {
        for n in nodes {
            match n {
                IrNode::Pulse(p) => self.pulse(tl, p),
                IrNode::Measure(m) => self.measure(tl, m),
                IrNode::IfElse(b) => self.if_else(tl, b)?,
                IrNode::Barrier { qubits } => {
                    let t = qubits.iter().map(|q| tl.ready(&qkey(q))).max().unwrap_or(0);
                    for q in qubits {
                        tl.ready.insert(qkey(q), t);
                    }
                }
                IrNode::Delay { qubits, ticks } => {
                    for q in qubits.iter() {
                        let k = qkey(q);
                        let t = tl.ready(&k) + *ticks;
                        tl.ready.insert(k, t);
                    }
                }
                IrNode::VirtualZ { .. } => {}
            }
        }
        Ok(())
    }
}

/// Assigns start times to every pulse, measurement and conditional, and
/// plans how each core evaluates each condition.
pub fn schedule(mut ir: IrProgram, cal: &CalibrationSet) -> Result<IrProgram, CompileError> {
    let mut uses = BTreeMap::new();
    count_uses(&ir.nodes, &mut uses);
    let mut s = Scheduler {
        cores: &ir.cores,
        feedback_latency: cal.feedback_latency,
        avail: BTreeMap::new(),
        uses,
        next_reg: BTreeMap::new(),
    };
    let mut tl = Timeline::default();
    for &core in ir.cores.keys() {
        // The leading sync retires at qclk 0, i.e. IR time -dispatch_offset.
        tl.issue_free.insert(core, -(ir.dispatch_offset as i64));
    }
    let mut nodes = std::mem::take(&mut ir.nodes);
    s.block(&mut tl, &mut nodes)?;
    ir.nodes = nodes;
    Ok(ir)
}
