// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! Cycle-accurate lockstep emulation of all cores of a program.
//!
//! One cycle is one tick of the 500 MHz DSP clock. A core issues an
//! instruction, and the instruction retires a fixed number of cycles later:
//!
//! | instruction              | retires                                   |
//! |--------------------------|-------------------------------------------|
//! | pulse                    | when qclk == time, no earlier than issue+4 |
//! | alu, jump, halt          | issue+4                                   |
//! | bralu                    | issue+5                                   |
//! | rdfproc, brfproc         | one cycle after a value is available, checked from issue+4 |
//! | sync                     | arrives at issue+4, retires the cycle after the last arrival |
//!
//! The next instruction issues in the cycle its predecessor retires. A core's
//! qclk counts every cycle and is zero in the cycle a sync barrier releases it.
//!
//! Within a cycle, due fproc deliveries land first, cores then step in id
//! order, barriers release, and finally the [`FprocSource`] observes the
//! pulses emitted in that cycle.

mod io;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub use io::{read_delivery_script, write_events_csv, Delivery, ScriptedSource};

use crate::isa::{validate_program, AluDst, Instruction, IsaError, ProgramFile, PulseCommand, RegisterFile};

pub const PULSE_LATENCY: u64 = 4;
pub const ALU_LATENCY: u64 = 4;
pub const JUMP_LATENCY: u64 = 4;
pub const HALT_LATENCY: u64 = 4;
pub const BRANCH_LATENCY: u64 = 5;
/// Cycles before an fproc read or sync first checks its condition.
pub const WAIT_CHECK: u64 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmuError {
    #[error("core {core} pc {pc}: pulse for qclk {time} is late (qclk is {qclk} at cycle {cycle})")]
    PulseLate {
        core: u16,
        pc: usize,
        time: u32,
        qclk: i64,
        cycle: u64,
    },
    #[error("core {core}: pc {pc} out of bounds")]
    PcOutOfBounds { core: u16, pc: i64 },
    #[error("deadlock at cycle {cycle}: {}", blocked_list(.blocked))]
    Deadlock {
        cycle: u64,
        blocked: Vec<(u16, CoreStatus)>,
    },
    #[error("core {core}: {source}")]
    Program { core: u16, source: IsaError },
    #[error("duplicate core id {0}")]
    DuplicateCore(u16),
    #[error("fproc source: {0}")]
    Source(String),
}

fn blocked_list(blocked: &[(u16, CoreStatus)]) -> String {
    blocked
        .iter()
        .map(|(c, s)| format!("core {c} {s}"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CoreStatus {
    Running,
    WaitingFproc { fproc_id: u16 },
    WaitingSync { barrier_id: u8 },
    Halted,
}

impl fmt::Display for CoreStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreStatus::Running => write!(f, "running"),
            CoreStatus::WaitingFproc { fproc_id } => write!(f, "waiting on fproc {fproc_id}"),
            CoreStatus::WaitingSync { barrier_id } => write!(f, "waiting at barrier {barrier_id}"),
            CoreStatus::Halted => write!(f, "halted"),
        }
    }
}

/// A pulse handed to a generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PulseEvent {
    pub cycle: u64,
    pub core: u16,
    pub channel: u16,
    pub qclk: i64,
    pub cmd: PulseCommand,
}

/// One retired instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Retirement {
    pub core: u16,
    pub pc: usize,
    pub instr: Instruction,
    pub issue: u64,
    pub retire: u64,
    /// The core's qclk in the retire cycle, after the instruction took effect.
    pub qclk: i64,
    /// Cycles spent waiting for a pulse time, an fproc value or a barrier.
    pub stall: u64,
}

/// Issue-to-retire cycles without any wait.
pub fn min_latency(instr: &Instruction) -> u64 {
    match instr {
        Instruction::Pulse { .. } => PULSE_LATENCY,
        Instruction::Alu { .. } => ALU_LATENCY,
        Instruction::Jump { .. } => JUMP_LATENCY,
        Instruction::Halt => HALT_LATENCY,
        Instruction::BranchAlu { .. } => BRANCH_LATENCY,
        Instruction::ReadFproc { .. } | Instruction::BranchFproc { .. } | Instruction::Sync { .. } => WAIT_CHECK + 1,
    }
}

/// Supplies function-processor results, possibly in response to pulses.
pub trait FprocSource {
    /// Results due at `cycle`, as `(fproc_id, value)`.
    fn deliveries(&mut self, cycle: u64) -> Vec<(u16, i32)>;
    /// Pulses emitted during `cycle`.
    fn observe(&mut self, cycle: u64, events: &[PulseEvent]) -> Result<(), String>;
    /// Earliest cycle with a pending delivery.
    fn next_due(&self) -> Option<u64>;
}

/// Source that never delivers anything.
pub struct NoSource;

impl FprocSource for NoSource {
    fn deliveries(&mut self, _: u64) -> Vec<(u16, i32)> {
        Vec::new()
    }
    fn observe(&mut self, _: u64, _: &[PulseEvent]) -> Result<(), String> {
        Ok(())
    }
    fn next_due(&self) -> Option<u64> {
        None
    }
}

#[derive(Debug, Clone, Copy)]
struct Inflight {
    issue: u64,
    /// Cycle at which the instruction retires, once known.
    retire: Option<u64>,
    /// Value popped by an fproc instruction.
    value: Option<i32>,
    arrived: bool,
}

#[derive(Debug, Clone)]
pub struct CoreState {
    pub id: u16,
    pub pc: usize,
    pub regs: RegisterFile,
    /// qclk = cycle - epoch.
    pub epoch: i64,
    pub status: CoreStatus,
    program: Vec<Instruction>,
    inflight: Option<Inflight>,
}

impl CoreState {
    pub fn qclk(&self, cycle: u64) -> i64 {
        cycle as i64 - self.epoch
    }

    pub fn program(&self) -> &[Instruction] {
        &self.program
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    BudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    /// Cycle at which the last core halted, or the budget.
    pub cycles: u64,
    pub events: Vec<PulseEvent>,
}

#[derive(Debug, Clone)]
pub struct Machine {
    pub cores: Vec<CoreState>,
    pub cycle: u64,
    pub events: Vec<PulseEvent>,
    /// Retirement trace, recorded when `tracing` is set.
    pub trace: Vec<Retirement>,
    pub tracing: bool,
    mailboxes: BTreeMap<u16, Vec<i32>>,
    cursors: BTreeMap<(u16, u16), usize>,
    arrivals: BTreeMap<u8, BTreeMap<u16, u64>>,
    last_halt: u64,
}

impl Machine {
    pub fn new(program: &ProgramFile) -> Result<Self, EmuError> {
        let mut ids = BTreeSet::new();
        let mut cores = Vec::new();
        for c in &program.cores {
            if !ids.insert(c.core_id) {
                return Err(EmuError::DuplicateCore(c.core_id));
            }
            validate_program(&c.instructions).map_err(|source| EmuError::Program {
                core: c.core_id,
                source,
            })?;
            let status = if c.instructions.is_empty() {
                CoreStatus::Halted
            } else {
                CoreStatus::Running
            };
            cores.push(CoreState {
                id: c.core_id,
                pc: 0,
                regs: RegisterFile::new(),
                epoch: 0,
                status,
                program: c.instructions.clone(),
                inflight: None,
            });
        }
        cores.sort_by_key(|c| c.id);
        let mut m = Machine {
            cores,
            cycle: 0,
            events: Vec::new(),
            trace: Vec::new(),
            tracing: false,
            mailboxes: BTreeMap::new(),
            cursors: BTreeMap::new(),
            arrivals: BTreeMap::new(),
            last_halt: 0,
        };
        for k in 0..m.cores.len() {
            if m.cores[k].status != CoreStatus::Halted {
                m.cores[k].inflight = Some(Inflight::issued(0));
            }
        }
        Ok(m)
    }

    pub fn with_trace(mut self) -> Self {
        self.tracing = true;
        self
    }

    pub fn core(&self, id: u16) -> Option<&CoreState> {
        self.cores.iter().find(|c| c.id == id)
    }

    pub fn all_halted(&self) -> bool {
        self.cores.iter().all(|c| c.status == CoreStatus::Halted)
    }

    /// Appends `value` to the mailbox of `fproc_id`.
    pub fn deliver_fproc(&mut self, fproc_id: u16, value: i32) {
        self.mailboxes.entry(fproc_id).or_default().push(value);
    }

    fn pop(&mut self, core: u16, fproc_id: u16) -> Option<i32> {
        let cursor = self.cursors.entry((core, fproc_id)).or_insert(0);
        let v = self.mailboxes.get(&fproc_id)?.get(*cursor).copied()?;
        *cursor += 1;
        Some(v)
    }

    /// Executes the current cycle and advances by one. Returns the pulses
    /// emitted in the executed cycle.
    pub fn step(&mut self, source: &mut dyn FprocSource) -> Result<Vec<PulseEvent>, EmuError> {
        let cycle = self.cycle;
        for (fid, value) in source.deliveries(cycle) {
            self.deliver_fproc(fid, value);
        }
        let first = self.events.len();
        for k in 0..self.cores.len() {
            self.step_core(k, cycle)?;
        }
        self.release_barriers(cycle);
        let emitted = self.events[first..].to_vec();
        source.observe(cycle, &emitted).map_err(EmuError::Source)?;
        self.cycle += 1;
        Ok(emitted)
    }

    fn step_core(&mut self, k: usize, cycle: u64) -> Result<(), EmuError> {
        let core = &self.cores[k];
        let Some(inf) = core.inflight else {
            return Ok(());
        };
        let instr = core.program[core.pc];
        let id = core.id;
        let ready = inf.issue + WAIT_CHECK;
        let mut inf = inf;
        let retire_now = match instr {
            Instruction::Pulse { time, dest_channel, cmd } => {
                let qclk = core.qclk(cycle);
                if cycle < inf.issue + PULSE_LATENCY || qclk < time as i64 {
                    false
                } else if qclk > time as i64 {
                    return Err(EmuError::PulseLate {
                        core: id,
                        pc: core.pc,
                        time,
                        qclk,
                        cycle,
                    });
                } else {
                    self.events.push(PulseEvent {
                        cycle,
                        core: id,
                        channel: dest_channel,
                        qclk,
                        cmd,
                    });
                    true
                }
            }
            Instruction::Alu { .. } => cycle == inf.issue + ALU_LATENCY,
            Instruction::Jump { .. } => cycle == inf.issue + JUMP_LATENCY,
            Instruction::Halt => cycle == inf.issue + HALT_LATENCY,
            Instruction::BranchAlu { .. } => cycle == inf.issue + BRANCH_LATENCY,
            Instruction::ReadFproc { fproc_id, .. } | Instruction::BranchFproc { fproc_id, .. } => {
                if let Some(r) = inf.retire {
                    cycle == r
                } else {
                    if cycle >= ready {
                        match self.pop(id, fproc_id) {
                            Some(v) => {
                                inf.value = Some(v);
                                inf.retire = Some(cycle + 1);
                                self.cores[k].status = CoreStatus::Running;
                            }
                            None => self.cores[k].status = CoreStatus::WaitingFproc { fproc_id },
                        }
                    }
                    false
                }
            }
            Instruction::Sync { barrier_id, .. } => {
                if let Some(r) = inf.retire {
                    cycle == r
                } else {
                    if cycle >= ready && !inf.arrived {
                        inf.arrived = true;
                        self.arrivals.entry(barrier_id).or_default().insert(id, cycle);
                        self.cores[k].status = CoreStatus::WaitingSync { barrier_id };
                    }
                    false
                }
            }
        };
        self.cores[k].inflight = Some(inf);
        if retire_now {
            self.retire(k, cycle, instr, inf)?;
        }
        Ok(())
    }

    fn retire(&mut self, k: usize, cycle: u64, instr: Instruction, inf: Inflight) -> Result<(), EmuError> {
        let core = &mut self.cores[k];
        let pc = core.pc;
        let mut next = pc as i64 + 1;
        match instr {
            Instruction::Alu { op, lhs, rhs, dst } => {
                let rhs = match rhs {
                    crate::isa::Operand::Reg(r) => core.regs.read(r),
                    crate::isa::Operand::Imm(v) => v,
                };
                let v = op.eval(core.regs.read(lhs), rhs);
                match dst {
                    AluDst::Reg(r) => core.regs.write(r, v),
                    AluDst::QclkIncrement => core.epoch -= v as i64,
                    AluDst::InstructionPointer => next = v as i64,
                }
            }
            Instruction::Jump { target } => next = target as i64,
            Instruction::BranchAlu { op, lhs, rhs, target } => {
                let rhs = match rhs {
                    crate::isa::Operand::Reg(r) => core.regs.read(r),
                    crate::isa::Operand::Imm(v) => v,
                };
                if op.eval(core.regs.read(lhs), rhs) != 0 {
                    next = target as i64;
                }
            }
            Instruction::ReadFproc { dst, .. } => {
                core.regs.write(dst, inf.value.expect("value popped before retirement"));
            }
            Instruction::BranchFproc { compare_value, target, .. } => {
                if inf.value == Some(compare_value) {
                    next = target as i64;
                }
            }
            Instruction::Pulse { .. } | Instruction::Sync { .. } | Instruction::Halt => {}
        }
        if self.tracing {
            self.trace.push(Retirement {
                core: core.id,
                pc,
                instr,
                issue: inf.issue,
                retire: cycle,
                qclk: core.qclk(cycle),
                stall: cycle - inf.issue - min_latency(&instr),
            });
        }
        if instr == Instruction::Halt {
            core.status = CoreStatus::Halted;
            core.inflight = None;
            self.last_halt = self.last_halt.max(cycle);
            return Ok(());
        }
        if next < 0 || next as usize >= core.program.len() {
            return Err(EmuError::PcOutOfBounds { core: core.id, pc: next });
        }
        core.pc = next as usize;
        core.status = CoreStatus::Running;
        core.inflight = Some(Inflight::issued(cycle));
        Ok(())
    }

    fn release_barriers(&mut self, cycle: u64) {
        let mut released = Vec::new();
        for (&barrier_id, arrived) in &self.arrivals {
            let Some(&first) = arrived.keys().next() else { continue };
            let mask = match self.core(first).map(|c| c.program[c.pc]) {
                Some(Instruction::Sync { core_mask, .. }) => core_mask,
                _ => continue,
            };
            let members: Vec<u16> = (0..64).filter(|b| mask >> b & 1 == 1).collect();
            if members.iter().all(|m| arrived.contains_key(m)) {
                released.push((barrier_id, members));
            }
        }
        for (barrier_id, members) in released {
            let arrived = self.arrivals.get_mut(&barrier_id).expect("barrier present");
            for m in &members {
                arrived.remove(m);
            }
            for core in self.cores.iter_mut().filter(|c| members.contains(&c.id)) {
                core.epoch = cycle as i64 + 1;
                if let Some(inf) = &mut core.inflight {
                    inf.retire = Some(cycle + 1);
                }
            }
        }
    }

    /// Earliest cycle at which any core can make progress on its own.
    fn next_action(&self) -> Option<u64> {
        let now = self.cycle;
        self.cores
            .iter()
            .filter_map(|c| {
                let inf = c.inflight?;
                let at = match c.program[c.pc] {
                    Instruction::Pulse { time, .. } => {
                        let due = time as i64 + c.epoch;
                        (inf.issue + PULSE_LATENCY).max(due.max(0) as u64)
                    }
                    Instruction::Alu { .. } => inf.issue + ALU_LATENCY,
                    Instruction::Jump { .. } => inf.issue + JUMP_LATENCY,
                    Instruction::Halt => inf.issue + HALT_LATENCY,
                    Instruction::BranchAlu { .. } => inf.issue + BRANCH_LATENCY,
                    Instruction::ReadFproc { fproc_id, .. } | Instruction::BranchFproc { fproc_id, .. } => {
                        match inf.retire {
                            Some(r) => r,
                            None if now <= inf.issue + WAIT_CHECK => inf.issue + WAIT_CHECK,
                            None => {
                                let cursor = self.cursors.get(&(c.id, fproc_id)).copied().unwrap_or(0);
                                let queued = self.mailboxes.get(&fproc_id).map_or(0, |m| m.len());
                                if cursor < queued {
                                    now
                                } else {
                                    return None;
                                }
                            }
                        }
                    }
                    Instruction::Sync { .. } => match inf.retire {
                        Some(r) => r,
                        None if !inf.arrived => inf.issue + WAIT_CHECK,
                        None => return None,
                    },
                };
                Some(at.max(now))
            })
            .min()
    }

    /// Runs until every core halts or `max_cycles` cycles have executed,
    /// skipping cycles in which nothing can happen.
    pub fn run(&mut self, source: &mut dyn FprocSource, max_cycles: u64) -> Result<RunOutcome, EmuError> {
        while !self.all_halted() {
            let next = match (self.next_action(), source.next_due()) {
                (Some(a), Some(d)) => a.min(d.max(self.cycle)),
                (Some(a), None) => a,
                (None, Some(d)) => d.max(self.cycle),
                (None, None) => {
                    return Err(EmuError::Deadlock {
                        cycle: self.cycle,
                        blocked: self
                            .cores
                            .iter()
                            .filter(|c| c.status != CoreStatus::Halted)
                            .map(|c| (c.id, c.status))
                            .collect(),
                    })
                }
            };
            if next >= max_cycles {
                self.cycle = max_cycles;
                return Ok(RunOutcome {
                    status: RunStatus::BudgetExhausted,
                    cycles: max_cycles,
                    events: self.events.clone(),
                });
            }
            self.cycle = next;
            self.step(source)?;
        }
        Ok(RunOutcome {
            status: RunStatus::Completed,
            cycles: self.last_halt,
            events: self.events.clone(),
        })
    }
}

impl Inflight {
    fn issued(cycle: u64) -> Self {
        Inflight {
            issue: cycle,
            retire: None,
            value: None,
            arrived: false,
        }
    }
}
