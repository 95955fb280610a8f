// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

pub mod assembler;
pub mod compiler;
pub mod demos;
pub mod dsp;
pub mod emulator;
pub mod isa;
pub mod ptp;
pub mod qpu;
pub mod runner;
