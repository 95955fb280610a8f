// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! Per-channel envelope memory images and the QEV1 file format.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AssembleError;
use crate::dsp::{DspError, EnvelopeMemory};
use crate::isa::ENVELOPE_CAPACITY;

pub const ENVELOPE_MAGIC: &[u8; 4] = b"QEV1";

/// Where a named envelope lives in a channel's memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvelopeSlot {
    pub addr: u16,
    pub len: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvelopeEntry {
    pub addr: u16,
    pub samples: Vec<(i16, i16)>,
}

/// Sample table of one output channel plus its name directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvelopeImage {
    pub channel: String,
    pub capacity: usize,
    pub entries: Vec<EnvelopeEntry>,
    pub directory: BTreeMap<String, EnvelopeSlot>,
}

impl EnvelopeImage {
    pub fn new(channel: &str, capacity: usize) -> Self {
        EnvelopeImage {
            channel: channel.to_string(),
            capacity,
            entries: Vec::new(),
            directory: BTreeMap::new(),
        }
    }

    /// Entries used so far.
    pub fn used(&self) -> usize {
        self.entries.iter().map(|e| e.samples.len()).sum()
    }

    /// Stores `samples` under `name`, reusing an identical table if one exists.
    pub fn insert(&mut self, name: &str, samples: Vec<(i16, i16)>) -> Result<EnvelopeSlot, AssembleError> {
        if let Some(slot) = self.directory.get(name) {
            return Ok(*slot);
        }
        let len = samples.len() as u16;
        let addr = match self.entries.iter().find(|e| e.samples == samples) {
            Some(e) => e.addr,
            None => {
                let addr = self.used();
                if addr + samples.len() > self.capacity {
                    return Err(AssembleError::EnvelopeOverflow {
                        channel: self.channel.clone(),
                        needed: addr + samples.len(),
                        capacity: self.capacity,
                    });
                }
                self.entries.push(EnvelopeEntry {
                    addr: addr as u16,
                    samples,
                });
                addr as u16
            }
        };
        let slot = EnvelopeSlot { addr, len };
        self.directory.insert(name.to_string(), slot);
        Ok(slot)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + self.used() * 4 + self.entries.len() * 4);
        out.extend_from_slice(ENVELOPE_MAGIC);
        out.extend_from_slice(&(self.entries.len() as u16).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&e.addr.to_le_bytes());
            out.extend_from_slice(&(e.samples.len() as u16).to_le_bytes());
            for &(i, q) in &e.samples {
                out.extend_from_slice(&i.to_le_bytes());
                out.extend_from_slice(&q.to_le_bytes());
            }
        }
        out
    }

    /// Parses a QEV1 file. The name directory is not stored in the file and
    /// comes back empty.
    pub fn from_bytes(channel: &str, bytes: &[u8]) -> Result<Self, AssembleError> {
        let bad = |m: String| AssembleError::Format(format!("{channel}: {m}"));
        if bytes.len() < 6 {
            return Err(bad("truncated envelope image header".into()));
        }
        if &bytes[..4] != ENVELOPE_MAGIC {
            return Err(bad(format!(
                "bad magic {:?}, expected \"QEV1\"",
                String::from_utf8_lossy(&bytes[..4])
            )));
        }
        let u16_at = |p: usize| u16::from_le_bytes([bytes[p], bytes[p + 1]]);
        let count = u16_at(4) as usize;
        let mut pos = 6;
        let mut entries = Vec::with_capacity(count);
        for k in 0..count {
            if bytes.len() < pos + 4 {
                return Err(bad(format!("truncated header of entry {k}")));
            }
            let addr = u16_at(pos);
            let len = u16_at(pos + 2) as usize;
            pos += 4;
            if bytes.len() < pos + 4 * len {
                return Err(bad(format!("truncated samples of entry {k}")));
            }
            if addr as usize + len > ENVELOPE_CAPACITY {
                return Err(bad(format!("entry {k} at {addr}+{len} exceeds capacity")));
            }
            let samples = (0..len)
                .map(|n| {
                    let p = pos + 4 * n;
                    (u16_at(p) as i16, u16_at(p + 2) as i16)
                })
                .collect();
            pos += 4 * len;
            entries.push(EnvelopeEntry { addr, samples });
        }
        if pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(EnvelopeImage {
            channel: channel.to_string(),
            capacity: ENVELOPE_CAPACITY,
            entries,
            directory: BTreeMap::new(),
        })
    }

    /// Writes every entry into `mem`; returns the bytes that changed.
    pub fn load(&self, mem: &mut EnvelopeMemory) -> Result<usize, DspError> {
        let mut changed = 0;
        for e in &self.entries {
            changed += mem.write(e.addr as usize, &e.samples)?;
        }
        Ok(changed)
    }
}
