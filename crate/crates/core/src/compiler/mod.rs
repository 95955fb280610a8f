// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! Circuit compiler: parse, resolve gates to pulses, apply virtual phases,
//! schedule, and split into one pulse-level program per core.

pub mod calibration;
pub mod circuit;
pub mod hardware;
pub mod ir;
pub mod schedule;
pub mod split;
pub mod vz;

use std::fmt;

use thiserror::Error;

pub use calibration::CalibrationSet;
pub use circuit::{parse_circuit, CircuitProgram, Statement, StmtKind};
pub use hardware::{ChannelKind, ChannelMap, HardwareConfig};
pub use ir::{resolve_gates, IrNode, IrProgram};
pub use schedule::schedule;
pub use split::{split_per_core, CoreOp, CoreProgram, PulseProgram};
pub use vz::apply_virtual_z;

/// 1-based source position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, serde::Serialize, serde::Deserialize)]
pub struct Pos {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub pos: Pos,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.pos, self.message)
    }
}

fn join_diagnostics(d: &[Diagnostic]) -> String {
    d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error("{}", join_diagnostics(.0))]
    Parse(Vec<Diagnostic>),
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("hardware config: {0}")]
    Hardware(String),
    #[error("{pos}: {message}")]
    Resolve { pos: Pos, message: String },
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("split: {0}")]
    Split(String),
}

/// Parses and lowers `source` all the way to per-core programs.
pub fn compile(
    source: &str,
    cal: &CalibrationSet,
    hw: &HardwareConfig,
) -> Result<PulseProgram, CompileError> {
    let map = hw.resolve()?;
    cal.validate(&map)?;
    let prog = parse_circuit(source)?;
    let ir = resolve_gates(&prog, cal, &map)?;
    let ir = apply_virtual_z(ir)?;
    let ir = schedule(ir, cal)?;
    split_per_core(&ir, cal, &map)
}
