// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! Two-qubit demo setup and feedback circuits.

use thiserror::Error;

use crate::assembler::{assemble, AssembleError, Assembly};
use crate::compiler::{compile, CalibrationSet, ChannelMap, CompileError, HardwareConfig};
use crate::runner::{RunError, Runner};

pub const HARDWARE: &str = include_str!("../demos/hardware.json");
pub const CALIBRATION: &str = include_str!("../demos/calibration.json");
/// Measure a superposition, then flip the qubit through either branch arm.
pub const FAST_RESET: &str = include_str!("../demos/fast_reset.json");
/// Copy Q0's measured bit onto Q1 through a cross-core branch.
pub const COND_BIT_FLIP: &str = include_str!("../demos/cond_bit_flip.json");
/// Return both qubits to 0 after a random preparation.
pub const ACTIVE_RESET: &str = include_str!("../demos/active_reset.json");

pub const CIRCUITS: [(&str, &str); 3] = [
    ("fast_reset", FAST_RESET),
    ("cond_bit_flip", COND_BIT_FLIP),
    ("active_reset", ACTIVE_RESET),
];

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error(transparent)]
    Run(#[from] RunError),
}

pub fn hardware() -> HardwareConfig {
    HardwareConfig::from_json(HARDWARE).expect("demo hardware parses")
}

pub fn calibration() -> CalibrationSet {
    CalibrationSet::from_json(CALIBRATION).expect("demo calibration parses")
}

/// Demo calibration with readout noise switched off.
pub fn noiseless_calibration() -> CalibrationSet {
    let mut cal = calibration();
    cal.qubits.values_mut().for_each(|q| q.model.noise_sigma = 0.0);
    cal
}

/// Compiles, assembles and loads `circuit`.
pub fn build(circuit: &str, cal: &CalibrationSet, hw: &HardwareConfig) -> Result<(Assembly, Runner), BuildError> {
    let map: ChannelMap = hw.resolve()?;
    let prog = compile(circuit, cal, hw)?;
    let asm = assemble(&prog, &map)?;
    let runner = Runner::from_assembly(&asm, cal, map)?;
    Ok((asm, runner))
}
