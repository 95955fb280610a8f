// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! Hardware channel configuration and qubit-to-core mapping.
//!
//! Channel ids are positions in the `channels` list. Each channel belongs to
//! the core of its qubit. Qubit order (used for histogram keys and for the
//! default mapping) is order of first appearance in `channels`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::CompileError;
use crate::isa::ENVELOPE_CAPACITY;

pub const DEFAULT_DSP_CLOCK_HZ: f64 = 500e6;
pub const DEFAULT_DISPATCH_OFFSET: u64 = 16;
/// Smallest dispatch offset that lets a pulse at time 0 issue after the leading sync.
pub const MIN_DISPATCH_OFFSET: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    QubitDrive,
    ReadoutDrive,
    ReadoutDemod,
}

impl ChannelKind {
    pub fn is_output(self) -> bool {
        !matches!(self, ChannelKind::ReadoutDemod)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub name: String,
    pub kind: ChannelKind,
    pub qubit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dac: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adc: Option<u16>,
    pub sample_rate: f64,
    #[serde(default = "default_capacity")]
    pub env_capacity: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fproc_id: Option<u16>,
}

fn default_capacity() -> usize {
    ENVELOPE_CAPACITY
}

fn default_clock() -> f64 {
    DEFAULT_DSP_CLOCK_HZ
}

fn default_dispatch() -> u64 {
    DEFAULT_DISPATCH_OFFSET
}

/// The mapping document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareConfig {
    #[serde(default = "default_clock")]
    pub dsp_clock_hz: f64,
    #[serde(default = "default_dispatch")]
    pub dispatch_offset: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qubit_to_core: Option<BTreeMap<String, u16>>,
    pub channels: Vec<ChannelSpec>,
}

/// A channel with its id, core and derived rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub id: u16,
    pub name: String,
    pub kind: ChannelKind,
    pub qubit: String,
    pub core: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dac: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adc: Option<u16>,
    pub sample_rate: f64,
    pub samples_per_tick: u32,
    pub env_capacity: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fproc_id: Option<u16>,
}

impl Channel {
    /// qclk ticks covered by `samples` output samples, rounded up.
    pub fn ticks(&self, samples: u32) -> u64 {
        (samples as u64).div_ceil(self.samples_per_tick as u64)
    }
}

/// Validated hardware view used by the compiler, assembler and runner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMap {
    pub dsp_clock_hz: f64,
    pub dispatch_offset: u64,
    pub qubits: Vec<String>,
    pub qubit_to_core: BTreeMap<String, u16>,
    pub channels: Vec<Channel>,
}

impl ChannelMap {
    pub fn channel(&self, name: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn by_id(&self, id: u16) -> Option<&Channel> {
        self.channels.get(id as usize)
    }

    pub fn qubit_channel(&self, qubit: &str, kind: ChannelKind) -> Option<&Channel> {
        self.channels
            .iter()
            .find(|c| c.qubit == qubit && c.kind == kind)
    }

    pub fn core_of(&self, qubit: &str) -> Option<u16> {
        self.qubit_to_core.get(qubit).copied()
    }

    pub fn qubit_index(&self, qubit: &str) -> Option<usize> {
        self.qubits.iter().position(|q| q == qubit)
    }

    /// Cores that own at least one channel, ascending.
    pub fn cores(&self) -> Vec<u16> {
        let mut cores: Vec<u16> = self.channels.iter().map(|c| c.core).collect();
        cores.sort_unstable();
        cores.dedup();
        cores
    }

    pub fn core_channels(&self, core: u16) -> impl Iterator<Item = &Channel> {
        self.channels.iter().filter(move |c| c.core == core)
    }
}

impl HardwareConfig {
    pub fn from_json(text: &str) -> Result<Self, CompileError> {
        serde_json::from_str(text).map_err(|e| CompileError::Hardware(e.to_string()))
    }

    pub fn resolve(&self) -> Result<ChannelMap, CompileError> {
        let bad = |m: String| Err(CompileError::Hardware(m));
        if !(self.dsp_clock_hz > 0.0) {
            return bad(format!("dsp_clock_hz must be positive, got {}", self.dsp_clock_hz));
        }
        if self.dispatch_offset < MIN_DISPATCH_OFFSET {
            return bad(format!(
                "dispatch_offset must be at least {MIN_DISPATCH_OFFSET}, got {}",
                self.dispatch_offset
            ));
        }
        if self.channels.len() > u16::MAX as usize {
            return bad("too many channels".into());
        }
        let mut qubits: Vec<String> = Vec::new();
        for c in &self.channels {
            if !qubits.contains(&c.qubit) {
                qubits.push(c.qubit.clone());
            }
        }
        let qubit_to_core = match &self.qubit_to_core {
            Some(m) => {
                for q in &qubits {
                    if !m.contains_key(q) {
                        return bad(format!("qubit {q} missing from qubit_to_core"));
                    }
                }
                m.clone()
            }
            None => qubits
                .iter()
                .enumerate()
                .map(|(i, q)| (q.clone(), i as u16))
                .collect(),
        };
        if let Some(core) = qubit_to_core.values().find(|&&c| c >= 64) {
            return bad(format!("core id {core} exceeds the 64-core sync mask"));
        }
        let mut channels = Vec::new();
        let mut next_fproc = 0u16;
        for (id, c) in self.channels.iter().enumerate() {
            if self.channels[..id].iter().any(|o| o.name == c.name) {
                return bad(format!("duplicate channel name {}", c.name));
            }
            if self.channels[..id]
                .iter()
                .any(|o| o.qubit == c.qubit && o.kind == c.kind)
            {
                return bad(format!("qubit {} has two {:?} channels", c.qubit, c.kind));
            }
            let ratio = c.sample_rate / self.dsp_clock_hz;
            if !(ratio >= 1.0) || ratio.fract() != 0.0 {
                return bad(format!(
                    "channel {}: sample_rate {} is not an integer multiple of the {} Hz DSP clock",
                    c.name, c.sample_rate, self.dsp_clock_hz
                ));
            }
            if c.env_capacity == 0 || c.env_capacity > ENVELOPE_CAPACITY {
                return bad(format!(
                    "channel {}: env_capacity must be in 1..={ENVELOPE_CAPACITY}",
                    c.name
                ));
            }
            match c.kind {
                ChannelKind::ReadoutDemod => {
                    if c.adc.is_none() {
                        return bad(format!("demod channel {} needs an adc index", c.name));
                    }
                }
                _ => {
                    if c.dac.is_none() {
                        return bad(format!("output channel {} needs a dac index", c.name));
                    }
                    if c.fproc_id.is_some() {
                        return bad(format!("fproc_id is only valid on demod channels ({})", c.name));
                    }
                }
            }
            let fproc_id = if c.kind == ChannelKind::ReadoutDemod {
                let f = c.fproc_id.unwrap_or(next_fproc);
                next_fproc += 1;
                Some(f)
            } else {
                None
            };
            channels.push(Channel {
                id: id as u16,
                name: c.name.clone(),
                kind: c.kind,
                qubit: c.qubit.clone(),
                core: qubit_to_core[&c.qubit],
                dac: c.dac,
                adc: c.adc,
                sample_rate: c.sample_rate,
                samples_per_tick: ratio as u32,
                env_capacity: c.env_capacity,
                fproc_id,
            });
        }
        let fprocs: Vec<u16> = channels.iter().filter_map(|c| c.fproc_id).collect();
        for (i, f) in fprocs.iter().enumerate() {
            if fprocs[..i].contains(f) {
                return bad(format!("fproc_id {f} used by two demod channels"));
            }
        }
        Ok(ChannelMap {
            dsp_clock_hz: self.dsp_clock_hz,
            dispatch_offset: self.dispatch_offset,
            qubits,
            qubit_to_core,
            channels,
        })
    }
}
