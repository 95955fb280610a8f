// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! Event-log export and scripted fproc deliveries.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{FprocSource, PulseEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub cycle: u64,
    pub fproc_id: u16,
    pub value: i32,
}

/// Writes `cycle,channel,freq_word,phase_word,amp_word,length,env_addr`.
pub fn write_events_csv<W: Write>(w: W, events: &[PulseEvent]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["cycle", "channel", "freq_word", "phase_word", "amp_word", "length", "env_addr"])?;
    for e in events {
        out.write_record([
            e.cycle.to_string(),
            e.channel.to_string(),
            e.cmd.freq_word.to_string(),
            e.cmd.phase_word.to_string(),
            e.cmd.amp_word.to_string(),
            e.cmd.length.to_string(),
            e.cmd.env_addr.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a `cycle,fproc_id,value` script.
pub fn read_delivery_script<R: Read>(r: R) -> csv::Result<Vec<Delivery>> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    rd.deserialize().collect()
}

/// Open-loop source replaying a fixed delivery script.
#[derive(Debug, Clone)]
pub struct ScriptedSource {
    pending: Vec<Delivery>,
    next: usize,
}

impl ScriptedSource {
    pub fn new(mut script: Vec<Delivery>) -> Self {
        script.sort_by_key(|d| d.cycle);
        ScriptedSource {
            pending: script,
            next: 0,
        }
    }
}

impl FprocSource for ScriptedSource {
    fn deliveries(&mut self, cycle: u64) -> Vec<(u16, i32)> {
        let mut out = Vec::new();
        while let Some(d) = self.pending.get(self.next).filter(|d| d.cycle <= cycle) {
            out.push((d.fproc_id, d.value));
            self.next += 1;
        }
        out
    }

    fn observe(&mut self, _: u64, _: &[PulseEvent]) -> Result<(), String> {
        Ok(())
    }

    fn next_due(&self) -> Option<u64> {
        self.pending.get(self.next).map(|d| d.cycle)
    }
}
