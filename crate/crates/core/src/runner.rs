// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! Closed-loop shot execution: emulator, signal chain and qubit model.
//!
//! Pulse events are routed by channel kind. Qubit-drive pulses rotate their
//! qubit. A readout-drive tone samples the qubit's bit. A demod window is
//! answered when it ends: in `ideal-iq` mode directly from the model, in
//! `waveform` mode by synthesizing the ADC stream and running it through
//! the DLO mixer and integrator, normalized by `2/N`. The discriminated bit
//! reaches the window's fproc mailbox `fproc_latency` cycles later.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembler::{Assembly, EnvelopeImage};
use crate::compiler::hardware::{ChannelKind, ChannelMap};
use crate::compiler::ir::ResultInfo;
use crate::compiler::CalibrationSet;
use crate::dsp::{
    dequantize_sample, mix_and_integrate, mux_readout, quantize_sample, synth_pulse, Discriminator, DspError,
    EnvelopeMemory, IqPoint, MuxOutput,
};
use crate::emulator::{EmuError, FprocSource, Machine, PulseEvent, Retirement, RunStatus};
use crate::isa::{quantize_amp, Instruction, ProgramFile, AMP_BITS};
use crate::qpu::{QpuModel, QubitParams};

pub const DEFAULT_MAX_CYCLES: u64 = 10_000_000;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("shot {shot}: {source}")]
    Emulator { shot: u64, source: EmuError },
    #[error("shot {shot}: cycle budget of {budget} exhausted")]
    Budget { shot: u64, budget: u64 },
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    IdealIq,
    Waveform,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::IdealIq => "ideal-iq",
            Mode::Waveform => "waveform",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ideal-iq" => Ok(Mode::IdealIq),
            "waveform" => Ok(Mode::Waveform),
            _ => Err(format!("unknown mode {s:?}, expected ideal-iq or waveform")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunConfig {
    pub shots: u64,
    pub seed: u64,
    pub mode: Mode,
    pub records: bool,
    pub max_cycles: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            shots: 1,
            seed: 0,
            mode: Mode::IdealIq,
            records: false,
            max_cycles: DEFAULT_MAX_CYCLES,
        }
    }
}

/// One answered readout window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowResult {
    pub qubit: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<String>,
    /// Cycle at which the window closed.
    pub end: u64,
    /// Bit sampled by the model at the readout tone; none without a tone.
    pub true_bit: Option<u8>,
    pub iq: IqPoint,
    pub bit: u8,
}

#[derive(Debug, Clone)]
pub struct ShotOutcome {
    pub shot: u64,
    pub cycles: u64,
    pub events: Vec<PulseEvent>,
    pub windows: Vec<WindowResult>,
    /// ADC samples by ADC index (waveform mode).
    pub adc: BTreeMap<u16, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShotRecord {
    pub shot: u64,
    pub key: String,
    pub results: BTreeMap<String, u8>,
    pub cycles: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub min_cycles: u64,
    pub max_cycles: u64,
    pub mean_cycles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub shots: u64,
    pub seed: u64,
    pub mode: Mode,
    /// Qubits in bitstring order, leftmost first.
    pub qubits: Vec<String>,
    pub counts: BTreeMap<String, u64>,
    pub timing: Timing,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub records: Option<Vec<ShotRecord>>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn probability(&self, key: &str) -> f64 {
        *self.counts.get(key).unwrap_or(&0) as f64 / self.shots as f64
    }

    /// `bitstring,count` rows.
    pub fn write_counts_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "bitstring,count")?;
        for (k, n) in &self.counts {
            writeln!(w, "{k},{n}")?;
        }
        Ok(())
    }

    /// Gnuplot script drawing the histogram stored in `csv_path`.
    pub fn gnuplot_script(&self, csv_path: &str) -> String {
        format!(
            "set datafile separator ','\n\
             set style data histogram\n\
             set style fill solid 0.8\n\
             set boxwidth 0.8\n\
             set yrange [0:*]\n\
             set ylabel 'counts'\n\
             set title '{} shots, seed {}, {}'\n\
             plot '{csv_path}' using 2:xtic(1) skip 1 title 'qubits {}'\n",
            self.shots,
            self.seed,
            self.mode,
            self.qubits.join(" ")
        )
    }
}

/// `sum |env[n]|` over a stored region times the amplitude.
fn area(samples: &[(i16, i16)], amp: f64) -> f64 {
    samples.iter().map(|&s| dequantize_sample(s).norm()).sum::<f64>() * amp
}

/// A loaded program plus everything needed to execute shots of it.
#[derive(Debug, Clone)]
pub struct Runner {
    map: ChannelMap,
    template: Machine,
    params: Vec<QubitParams>,
    discriminators: Vec<Discriminator>,
    delays: Vec<u64>,
    fproc_latency: u64,
    results: Vec<ResultInfo>,
    measured: Vec<usize>,
    memories: BTreeMap<u16, EnvelopeMemory>,
}

impl Runner {
    pub fn new(
        program: &ProgramFile,
        images: &[EnvelopeImage],
        results: Vec<ResultInfo>,
        cal: &CalibrationSet,
        map: ChannelMap,
    ) -> Result<Self, RunError> {
        let mut params = Vec::new();
        let mut discriminators = Vec::new();
        let mut delays = Vec::new();
        for name in &map.qubits {
            let qc = cal
                .qubit(name)
                .ok_or_else(|| RunError::Calibration(format!("no calibration for qubit {name}")))?;
            let x90 = qc
                .gates
                .get("X90")
                .and_then(|p| p.iter().find(|t| t.channel == "drive"))
                .ok_or_else(|| RunError::Calibration(format!("{name}: X90 drive template needed as rotation reference")))?;
            let env = cal
                .envelope_samples(&x90.env)
                .ok_or_else(|| RunError::Calibration(format!("{name}: unknown envelope {}", x90.env)))?;
            let len = x90.length.map_or(env.len(), |l| l as usize).min(env.len());
            let q: Vec<_> = env[..len].iter().map(|&s| quantize_sample(s)).collect();
            let amp_word = quantize_amp(x90.amp).map_err(|e| RunError::Calibration(format!("{name}: {e}")))?;
            let x90_area = area(&q, amp_word as f64 / (1u32 << AMP_BITS) as f64);
            if x90_area <= 0.0 {
                return Err(RunError::Calibration(format!("{name}: X90 template has zero area")));
            }
            params.push(QubitParams {
                name: name.clone(),
                drive_freq: qc.drive_freq,
                tolerance_hz: cal.drive_tolerance_hz,
                x90_area,
                readout_amp: qc.model.readout_amp,
                dispersive_phase: qc.model.dispersive_phase,
                noise_sigma: qc.model.noise_sigma,
            });
            discriminators.push(qc.discriminator.discriminator());
            delays.push(qc.readout.delay);
        }
        let template = Machine::new(program).map_err(|source| RunError::Emulator { shot: 0, source })?;
        let mut measured: Vec<usize> = Vec::new();
        for core in &program.cores {
            for instr in &core.instructions {
                if let Instruction::Pulse { dest_channel, .. } = instr {
                    let ch = map
                        .by_id(*dest_channel)
                        .ok_or_else(|| RunError::Config(format!("core {}: unmapped channel {dest_channel}", core.core_id)))?;
                    if ch.kind == ChannelKind::ReadoutDemod {
                        let q = map.qubit_index(&ch.qubit).expect("mapped qubit");
                        if !measured.contains(&q) {
                            measured.push(q);
                        }
                    }
                }
            }
        }
        measured.sort();
        let mut runner = Runner {
            template,
            params,
            discriminators,
            delays,
            fproc_latency: cal.fproc_latency,
            results,
            measured,
            memories: map
                .channels
                .iter()
                .filter(|c| c.kind.is_output())
                .map(|c| (c.id, EnvelopeMemory::new(c.env_capacity)))
                .collect(),
            map,
        };
        runner.load_images(images)?;
        Ok(runner)
    }

    pub fn from_assembly(asm: &Assembly, cal: &CalibrationSet, map: ChannelMap) -> Result<Self, RunError> {
        Runner::new(&asm.program, &asm.images, asm.manifest.results.clone(), cal, map)
    }

    /// Writes envelope images into channel memories; returns bytes changed.
    pub fn load_images(&mut self, images: &[EnvelopeImage]) -> Result<usize, RunError> {
        let mut changed = 0;
        for img in images {
            let ch = self
                .map
                .channel(&img.channel)
                .ok_or_else(|| RunError::Config(format!("envelope image for unknown channel {}", img.channel)))?;
            let mem = self
                .memories
                .get_mut(&ch.id)
                .ok_or_else(|| RunError::Config(format!("channel {} has no envelope memory", img.channel)))?;
            changed += img.load(mem)?;
        }
        Ok(changed)
    }

    /// Replaces the program, keeping envelope memory contents.
    pub fn load_program(&mut self, program: &ProgramFile) -> Result<(), RunError> {
        self.template = Machine::new(program).map_err(|source| RunError::Emulator { shot: 0, source })?;
        Ok(())
    }

    pub fn memory(&self, channel: u16) -> Option<&EnvelopeMemory> {
        self.memories.get(&channel)
    }

    pub fn clear_logs(&mut self) {
        self.memories.values_mut().for_each(EnvelopeMemory::clear_log);
    }

    pub fn map(&self) -> &ChannelMap {
        &self.map
    }

    /// Names of the qubits forming the count key, leftmost first.
    pub fn key_qubits(&self) -> Vec<String> {
        self.measured.iter().map(|&q| self.params[q].name.clone()).collect()
    }

    pub fn run_shot(&self, shot: u64, seed: u64, mode: Mode, max_cycles: u64) -> Result<ShotOutcome, RunError> {
        self.shot_with(&mut self.template.clone(), shot, seed, mode, max_cycles)
    }

    /// Like [`Runner::run_shot`], also returning every retired instruction.
    pub fn run_shot_traced(
        &self,
        shot: u64,
        seed: u64,
        mode: Mode,
        max_cycles: u64,
    ) -> Result<(ShotOutcome, Vec<Retirement>), RunError> {
        let mut machine = self.template.clone();
        machine.tracing = true;
        let out = self.shot_with(&mut machine, shot, seed, mode, max_cycles)?;
        Ok((out, machine.trace))
    }

    fn shot_with(
        &self,
        machine: &mut Machine,
        shot: u64,
        seed: u64,
        mode: Mode,
        max_cycles: u64,
    ) -> Result<ShotOutcome, RunError> {
        let mut src = QpuSource::new(self, QpuModel::new(self.params.clone(), seed, shot), mode);
        let out = machine
            .run(&mut src, max_cycles)
            .map_err(|source| RunError::Emulator { shot, source })?;
        if out.status == RunStatus::BudgetExhausted {
            return Err(RunError::Budget { shot, budget: max_cycles });
        }
        src.settle(u64::MAX);
        if let Some(e) = src.error.take() {
            return Err(RunError::Emulator {
                shot,
                source: EmuError::Source(e),
            });
        }
        Ok(ShotOutcome {
            shot,
            cycles: out.cycles,
            events: out.events,
            windows: src.done,
            adc: src.adc,
        })
    }

    /// Count key: the last bit of every measured qubit, `x` if unmeasured in this shot.
    pub fn key(&self, outcome: &ShotOutcome) -> String {
        self.measured
            .iter()
            .map(|&q| {
                outcome
                    .windows
                    .iter()
                    .rev()
                    .find(|w| w.qubit == self.params[q].name)
                    .map_or('x', |w| if w.bit == 1 { '1' } else { '0' })
            })
            .collect()
    }

    pub fn record(&self, outcome: &ShotOutcome) -> ShotRecord {
        ShotRecord {
            shot: outcome.shot,
            key: self.key(outcome),
            results: outcome
                .windows
                .iter()
                .filter_map(|w| w.result.clone().map(|r| (r, w.bit)))
                .collect(),
            cycles: outcome.cycles,
        }
    }

    pub fn run(&self, cfg: &RunConfig) -> Result<RunReport, RunError> {
        if cfg.shots == 0 {
            return Err(RunError::Config("shots must be at least 1".into()));
        }
        let one = |shot| self.run_shot(shot, cfg.seed, cfg.mode, cfg.max_cycles).map(|o| self.record(&o));
        #[cfg(feature = "parallel")]
        let records: Vec<ShotRecord> = {
            use rayon::prelude::*;
            (0..cfg.shots).into_par_iter().map(one).collect::<Result<_, _>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let records: Vec<ShotRecord> = (0..cfg.shots).map(one).collect::<Result<_, _>>()?;
        let mut counts = BTreeMap::new();
        for r in &records {
            *counts.entry(r.key.clone()).or_insert(0) += 1;
        }
        let cycles = records.iter().map(|r| r.cycles);
        let timing = Timing {
            min_cycles: cycles.clone().min().unwrap_or(0),
            max_cycles: cycles.clone().max().unwrap_or(0),
            mean_cycles: cycles.sum::<u64>() as f64 / cfg.shots as f64,
        };
        Ok(RunReport {
            shots: cfg.shots,
            seed: cfg.seed,
            mode: cfg.mode,
            qubits: self.key_qubits(),
            counts,
            timing,
            records: cfg.records.then_some(records),
        })
    }

    /// Synthesizes the output of `channel` for `events`, one sample per DAC
    /// sample from cycle 0. Reads are logged in the channel's envelope memory.
    pub fn render_channel(&mut self, events: &[PulseEvent], channel: u16) -> Result<Vec<Complex64>, RunError> {
        let ch = self
            .map
            .by_id(channel)
            .ok_or_else(|| RunError::Config(format!("unknown channel {channel}")))?
            .clone();
        let mem = self
            .memories
            .get_mut(&channel)
            .ok_or_else(|| RunError::Config(format!("channel {} has no envelope memory", ch.name)))?;
        let mut pulses = Vec::new();
        for e in events.iter().filter(|e| e.channel == channel) {
            let start = e.cycle as usize * ch.samples_per_tick as usize;
            pulses.push((start, synth_pulse(&e.cmd, mem)?));
        }
        let refs: Vec<_> = pulses.iter().map(|(s, p)| (*s, p.as_slice())).collect();
        Ok(mux_readout(&refs).samples)
    }

    /// Sum of every output channel wired to `dac`.
    pub fn render_dac(&mut self, events: &[PulseEvent], dac: u16) -> Result<MuxOutput, RunError> {
        let ids: Vec<u16> = self
            .map
            .channels
            .iter()
            .filter(|c| c.kind.is_output() && c.dac == Some(dac))
            .map(|c| c.id)
            .collect();
        if ids.is_empty() {
            return Err(RunError::Config(format!("no channel drives DAC {dac}")));
        }
        let mut outs = Vec::new();
        for id in ids {
            outs.push(self.render_channel(events, id)?);
        }
        let refs: Vec<_> = outs.iter().map(|o| (0, o.as_slice())).collect();
        Ok(mux_readout(&refs))
    }
}

#[derive(Debug, Clone)]
struct Tone {
    qubit: usize,
    adc: u16,
    start: usize,
    len: usize,
    cycles_per_sample: f64,
    bit: u8,
}

#[derive(Debug, Clone)]
struct Window {
    qubit: usize,
    channel: u16,
    fproc_id: Option<u16>,
    adc: u16,
    start: usize,
    len: usize,
    freq_word: u32,
    end: u64,
}

struct QpuSource<'a> {
    runner: &'a Runner,
    model: QpuModel,
    mode: Mode,
    tones: Vec<Tone>,
    bits: Vec<VecDeque<u8>>,
    windows: Vec<Window>,
    counts: Vec<usize>,
    deliveries: Vec<(u64, u16, i32)>,
    done: Vec<WindowResult>,
    adc: BTreeMap<u16, Vec<f64>>,
    error: Option<String>,
}

impl<'a> QpuSource<'a> {
    fn new(runner: &'a Runner, model: QpuModel, mode: Mode) -> Self {
        let n = runner.params.len();
        QpuSource {
            runner,
            model,
            mode,
            tones: Vec::new(),
            bits: vec![VecDeque::new(); n],
            windows: Vec::new(),
            counts: vec![0; n],
            deliveries: Vec::new(),
            done: Vec::new(),
            adc: BTreeMap::new(),
            error: None,
        }
    }

    /// Answers every window that has closed by `cycle`.
    fn settle(&mut self, cycle: u64) {
        while let Some(k) = (0..self.windows.len())
            .filter(|&k| self.windows[k].end <= cycle)
            .min_by_key(|&k| (self.windows[k].end, self.windows[k].channel))
        {
            let w = self.windows.remove(k);
            if let Err(e) = self.answer(w) {
                self.error.get_or_insert(e);
            }
        }
    }

    fn answer(&mut self, w: Window) -> Result<(), String> {
        let q = w.qubit;
        let true_bit = self.bits[q].pop_front();
        let iq = match self.mode {
            Mode::IdealIq => match true_bit {
                Some(b) => self.model.iq(q, b),
                None => {
                    let s = self.model.params[q].noise_sigma;
                    IqPoint::new(self.model.gaussian(s), self.model.gaussian(s))
                }
            },
            Mode::Waveform => {
                let sigma = self.model.params[q].noise_sigma * (w.len as f64 / 2.0).sqrt();
                let buf = self.adc.entry(w.adc).or_default();
                if buf.len() < w.start + w.len {
                    buf.resize(w.start + w.len, 0.0);
                }
                for n in w.start..w.start + w.len {
                    let mut v = 0.0;
                    for t in self.tones.iter().filter(|t| t.adc == w.adc && (t.start..t.start + t.len).contains(&n)) {
                        let phi = self.model.params[t.qubit].readout_point(t.bit);
                        let theta = std::f64::consts::TAU * (t.cycles_per_sample * n as f64).fract();
                        v += phi.norm() * (theta + phi.arg()).cos();
                    }
                    buf[n] = v;
                }
                if sigma > 0.0 {
                    for n in w.start..w.start + w.len {
                        let e = self.model.gaussian(sigma);
                        self.adc.get_mut(&w.adc).expect("buffer exists")[n] += e;
                    }
                }
                let raw = mix_and_integrate(&self.adc[&w.adc], w.freq_word, w.start, w.len).map_err(|e| e.to_string())?;
                let scale = 2.0 / w.len as f64;
                IqPoint::new(raw.i * scale, raw.q * scale)
            }
        };
        let bit = self.runner.discriminators[q].discriminate(iq);
        let name = &self.runner.params[q].name;
        let ordinal = self.counts[q];
        self.counts[q] += 1;
        let result = self
            .runner
            .results
            .iter()
            .find(|r| &r.qubit == name && r.ordinal == ordinal)
            .map(|r| r.name.clone());
        if let Some(fid) = w.fproc_id {
            self.deliveries.push((w.end + self.runner.fproc_latency, fid, bit as i32));
        }
        self.done.push(WindowResult {
            qubit: name.clone(),
            result,
            end: w.end,
            true_bit,
            iq,
            bit,
        });
        Ok(())
    }

    fn event(&mut self, e: &PulseEvent) -> Result<(), String> {
        let map = &self.runner.map;
        let ch = map.by_id(e.channel).ok_or_else(|| format!("pulse on unmapped channel {}", e.channel))?;
        let q = map.qubit_index(&ch.qubit).ok_or_else(|| format!("unknown qubit {}", ch.qubit))?;
        let fs = ch.sample_rate;
        match ch.kind {
            ChannelKind::QubitDrive => {
                let mem = &self.runner.memories[&ch.id];
                let (a, l) = (e.cmd.env_addr as usize, e.cmd.length as usize);
                let region = mem.raw().get(a..a + l).ok_or_else(|| format!("{}: envelope region {a}+{l} out of bounds", ch.name))?;
                let area = area(region, e.cmd.amplitude());
                self.model
                    .apply_drive(q, area, e.cmd.cycles_per_sample() * fs, e.cmd.phase_rad());
            }
            ChannelKind::ReadoutDrive => {
                if e.cmd.amp_word == 0 {
                    return Ok(());
                }
                let bit = self.model.measure(q);
                self.bits[q].push_back(bit);
                if let Some(demod) = map.qubit_channel(&ch.qubit, ChannelKind::ReadoutDemod) {
                    let fs_adc = demod.sample_rate;
                    let spt = demod.samples_per_tick as u64;
                    self.tones.push(Tone {
                        qubit: q,
                        adc: demod.adc.unwrap_or(0),
                        start: ((e.cycle + self.runner.delays[q]) * spt) as usize,
                        len: (e.cmd.length as f64 * fs_adc / fs).round() as usize,
                        cycles_per_sample: e.cmd.cycles_per_sample() * fs / fs_adc,
                        bit,
                    });
                }
            }
            ChannelKind::ReadoutDemod => {
                let spt = ch.samples_per_tick as u64;
                self.windows.push(Window {
                    qubit: q,
                    channel: ch.id,
                    fproc_id: ch.fproc_id,
                    adc: ch.adc.unwrap_or(0),
                    start: (e.cycle * spt) as usize,
                    len: e.cmd.length as usize,
                    freq_word: e.cmd.freq_word,
                    end: e.cycle + ch.ticks(e.cmd.length as u32),
                });
            }
        }
        Ok(())
    }
}

impl FprocSource for QpuSource<'_> {
    fn deliveries(&mut self, cycle: u64) -> Vec<(u16, i32)> {
        self.settle(cycle);
        let (due, rest): (Vec<_>, Vec<_>) = self.deliveries.iter().partition(|d| d.0 <= cycle);
        self.deliveries = rest;
        let mut due = due;
        due.sort_by_key(|d| d.0);
        due.into_iter().map(|(_, f, v)| (f, v)).collect()
    }

    fn observe(&mut self, cycle: u64, events: &[PulseEvent]) -> Result<(), String> {
        self.settle(cycle);
        for e in events {
            self.event(e)?;
        }
        match self.error.take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn next_due(&self) -> Option<u64> {
        let w = self.windows.iter().map(|w| w.end).min();
        let d = self.deliveries.iter().map(|d| d.0).min();
        match (w, d) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}
