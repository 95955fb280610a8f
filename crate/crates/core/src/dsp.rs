// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! Floating-point model of the gateware signal chain.
//!
//! Drive outputs are complex baseband: an envelope read from per-channel
//! envelope memory, scaled and multiplied by a DDS carrier. Readout drive
//! generators sharing a DAC are summed. On the receive side a real ADC
//! stream is mixed against a digital local oscillator (`e^{-j theta}`) and
//! summed over the readout window; the raw sum is the IQ point.
//!
//! One complex sample per DAC sample; no fixed-point rounding beyond the
//! 16-bit envelope storage.

use std::f64::consts::TAU;
use std::io::{self, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{PulseCommand, ENVELOPE_CAPACITY, FREQ_BITS, PHASE_BITS};

/// Full-scale value of a stored envelope component.
pub const SAMPLE_FULL_SCALE: f64 = 32767.0;

const ACC_MODULUS: u64 = 1 << FREQ_BITS;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DspError {
    #[error("envelope region [{addr}, {addr}+{len}) exceeds memory of {capacity} entries")]
    RegionOutOfBounds {
        addr: usize,
        len: usize,
        capacity: usize,
    },
    #[error("integration window [{start}, {start}+{len}) exceeds stream of {stream_len} samples")]
    WindowOutOfRange {
        start: usize,
        len: usize,
        stream_len: usize,
    },
    #[error("envelope sample {index} has magnitude {magnitude} > 1")]
    SampleMagnitude { index: usize, magnitude: f64 },
}

/// Pulse envelope at unit full scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    samples: Vec<Complex64>,
}

impl Envelope {
    pub fn new(samples: Vec<Complex64>) -> Result<Self, DspError> {
        for (index, s) in samples.iter().enumerate() {
            let magnitude = s.norm();
            if !(magnitude <= 1.0 + 1e-12) {
                return Err(DspError::SampleMagnitude { index, magnitude });
            }
        }
        Ok(Envelope { samples })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples as stored in envelope memory.
    pub fn quantized(&self) -> Vec<(i16, i16)> {
        self.samples.iter().map(|&s| quantize_sample(s)).collect()
    }
}

/// Rounds a unit-scale complex sample to signed 16-bit I/Q (ties away from zero).
pub fn quantize_sample(s: Complex64) -> (i16, i16) {
    let q = |x: f64| (x * SAMPLE_FULL_SCALE).round().clamp(-SAMPLE_FULL_SCALE, SAMPLE_FULL_SCALE) as i16;
    (q(s.re), q(s.im))
}

pub fn dequantize_sample((i, q): (i16, i16)) -> Complex64 {
    Complex64::new(i as f64 / SAMPLE_FULL_SCALE, q as f64 / SAMPLE_FULL_SCALE)
}

/// Record of envelope memory traffic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccessLog {
    /// `(addr, len)` of every read.
    pub reads: Vec<(usize, usize)>,
    /// Addresses of every entry whose contents changed on a write.
    pub writes: Vec<usize>,
}

impl AccessLog {
    /// Bytes written: each changed entry is one 4-byte I/Q word.
    pub fn bytes_written(&self) -> usize {
        self.writes.len() * 4
    }
}

/// One channel's envelope memory.
#[derive(Debug, Clone)]
pub struct EnvelopeMemory {
    words: Vec<(i16, i16)>,
    log: AccessLog,
}

impl Default for EnvelopeMemory {
    fn default() -> Self {
        Self::new(ENVELOPE_CAPACITY)
    }
}

impl EnvelopeMemory {
    pub fn new(capacity: usize) -> Self {
        EnvelopeMemory {
            words: vec![(0, 0); capacity],
            log: AccessLog::default(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.words.len()
    }

    fn check(&self, addr: usize, len: usize) -> Result<(), DspError> {
        if addr + len > self.words.len() {
            Err(DspError::RegionOutOfBounds {
                addr,
                len,
                capacity: self.words.len(),
            })
        } else {
            Ok(())
        }
    }

    /// Writes `samples` at `addr`, touching only entries whose value differs.
    /// Returns the number of bytes written.
    pub fn write(&mut self, addr: usize, samples: &[(i16, i16)]) -> Result<usize, DspError> {
        self.check(addr, samples.len())?;
        let before = self.log.writes.len();
        for (k, &s) in samples.iter().enumerate() {
            if self.words[addr + k] != s {
                self.words[addr + k] = s;
                self.log.writes.push(addr + k);
            }
        }
        Ok((self.log.writes.len() - before) * 4)
    }

    pub fn read(&mut self, addr: usize, len: usize) -> Result<Vec<Complex64>, DspError> {
        self.check(addr, len)?;
        self.log.reads.push((addr, len));
        Ok(self.words[addr..addr + len]
            .iter()
            .map(|&w| dequantize_sample(w))
            .collect())
    }

    pub fn raw(&self) -> &[(i16, i16)] {
        &self.words
    }

    pub fn log(&self) -> &AccessLog {
        &self.log
    }

    pub fn clear_log(&mut self) {
        self.log = AccessLog::default();
    }
}

/// Carrier phase in turns at sample `n`, from a 24-bit phase accumulator.
fn carrier_turns(freq_word: u32, phase_word: u16, n: usize) -> f64 {
    let offset = (phase_word as u64) << (FREQ_BITS - PHASE_BITS);
    let acc = (freq_word as u64 * (n as u64 % ACC_MODULUS) + offset) % ACC_MODULUS;
    acc as f64 / ACC_MODULUS as f64
}

/// `out[n] = amp * env[n] * exp(j(2 pi freq_word/2^24 n + 2 pi phase_word/2^14))`.
pub fn modulate(env: &[Complex64], amp: f64, freq_word: u32, phase_word: u16) -> Vec<Complex64> {
    env.iter()
        .enumerate()
        .map(|(n, &e)| {
            let theta = TAU * carrier_turns(freq_word, phase_word, n);
            e * amp * Complex64::cis(theta)
        })
        .collect()
}

/// Synthesizes the pulse `cmd` describes from `mem`.
pub fn synth_pulse(cmd: &PulseCommand, mem: &mut EnvelopeMemory) -> Result<Vec<Complex64>, DspError> {
    let env = mem.read(cmd.env_addr as usize, cmd.length as usize)?;
    Ok(modulate(&env, cmd.amplitude(), cmd.freq_word, cmd.phase_word))
}

/// Result of summing several generator outputs onto one DAC.
#[derive(Debug, Clone, PartialEq)]
pub struct MuxOutput {
    pub samples: Vec<Complex64>,
    /// Some sample exceeded unit magnitude (not clipped).
    pub saturated: bool,
}

/// Pointwise sum of `(start offset, samples)` pulses.
pub fn mux_readout(pulses: &[(usize, &[Complex64])]) -> MuxOutput {
    let len = pulses
        .iter()
        .map(|(start, s)| start + s.len())
        .max()
        .unwrap_or(0);
    let mut samples = vec![Complex64::new(0.0, 0.0); len];
    for (start, s) in pulses {
        for (k, &v) in s.iter().enumerate() {
            samples[start + k] += v;
        }
    }
    let saturated = samples.iter().any(|s| s.norm() > 1.0 + 1e-12);
    MuxOutput { samples, saturated }
}

/// Accumulated readout point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IqPoint {
    pub i: f64,
    pub q: f64,
}

impl IqPoint {
    pub fn new(i: f64, q: f64) -> Self {
        IqPoint { i, q }
    }

    pub fn to_complex(self) -> Complex64 {
        Complex64::new(self.i, self.q)
    }

    pub fn magnitude(self) -> f64 {
        self.to_complex().norm()
    }
}

impl From<Complex64> for IqPoint {
    fn from(z: Complex64) -> Self {
        IqPoint { i: z.re, q: z.im }
    }
}

/// Digital LO samples `exp(-j 2 pi w n / 2^24)` for `n` in `[start, start+len)`.
pub fn dlo(freq_word: u32, start: usize, len: usize) -> Vec<Complex64> {
    (start..start + len)
        .map(|n| Complex64::cis(-TAU * carrier_turns(freq_word, 0, n)))
        .collect()
}

/// `sum_{n in window} adc[n] exp(-j 2 pi w n / 2^24)`, with `n` indexing `adc`.
pub fn mix_and_integrate(
    adc: &[f64],
    dlo_freq_word: u32,
    start: usize,
    len: usize,
) -> Result<IqPoint, DspError> {
    if start + len > adc.len() {
        return Err(DspError::WindowOutOfRange {
            start,
            len,
            stream_len: adc.len(),
        });
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for n in start..start + len {
        acc += adc[n] * Complex64::cis(-TAU * carrier_turns(dlo_freq_word, 0, n));
    }
    Ok(acc.into())
}

/// Rotates and shifts the IQ plane so the state boundary is the real axis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Discriminator {
    pub rotation: f64,
    pub offset: IqPoint,
}

impl Discriminator {
    /// `z' = e^{j rotation} (iq - offset)`; state 0 iff `Im z' > 0`.
    pub fn discriminate(&self, iq: IqPoint) -> u8 {
        let z = Complex64::cis(self.rotation) * (iq.to_complex() - self.offset.to_complex());
        if z.im > 0.0 {
            0
        } else {
            1
        }
    }
}

pub fn discriminate(iq: IqPoint, d: &Discriminator) -> u8 {
    d.discriminate(iq)
}

/// Where an acquisition buffer taps the signal chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tap {
    Adc,
    Dlo,
    Dac,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionBuffer<T> {
    pub tap: Tap,
    pub samples: Vec<T>,
    /// The stream was longer than the buffer.
    pub truncated: bool,
}

/// Stores the first `capacity` samples of `stream`.
pub fn acquire<T: Clone>(tap: Tap, stream: &[T], capacity: usize) -> AcquisitionBuffer<T> {
    let n = stream.len().min(capacity);
    AcquisitionBuffer {
        tap,
        samples: stream[..n].to_vec(),
        truncated: stream.len() > capacity,
    }
}

/// Writes `n,i,q` rows, numbering from `first_index`.
pub fn write_waveform_csv<W: Write>(
    mut out: W,
    samples: &[Complex64],
    first_index: usize,
) -> io::Result<()> {
    writeln!(out, "n,i,q")?;
    for (k, s) in samples.iter().enumerate() {
        writeln!(out, "{},{},{}", first_index + k, s.re, s.im)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    fn memory_with(samples: &[Complex64]) -> EnvelopeMemory {
        let mut mem = EnvelopeMemory::default();
        let q: Vec<_> = samples.iter().map(|&s| quantize_sample(s)).collect();
        mem.write(0, &q).unwrap();
        mem
    }

    #[test]
    fn identity_carrier_returns_envelope() {
        let env: Vec<_> = (0..16).map(|k| c(k as f64 / 20.0, -0.3)).collect();
        let out = modulate(&env, 1.0, 0, 0);
        assert_eq!(out, env);
    }

    #[test]
    fn quarter_rate_carrier_cycles() {
        let env = vec![c(1.0, 0.0); 8];
        let out = modulate(&env, 1.0, 1 << 22, 0);
        let expected = [c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0), c(0.0, -1.0)];
        for (n, s) in out.iter().enumerate() {
            assert!(close(*s, expected[n % 4], 1e-12), "n={n} {s}");
        }
    }

    #[test]
    fn zero_amplitude_is_silent() {
        let mut mem = memory_with(&[c(1.0, 0.0); 32]);
        let cmd = PulseCommand {
            freq_word: 12345,
            phase_word: 99,
            amp_word: 0,
            length: 32,
            env_addr: 0,
        };
        let out = synth_pulse(&cmd, &mut mem).unwrap();
        assert!(out.iter().all(|s| s.norm() == 0.0));
    }

    #[test]
    fn synth_region_bounds() {
        let mut mem = EnvelopeMemory::new(64);
        let cmd = PulseCommand {
            length: 32,
            env_addr: 40,
            ..Default::default()
        };
        assert!(matches!(
            synth_pulse(&cmd, &mut mem),
            Err(DspError::RegionOutOfBounds { .. })
        ));
    }

    #[test]
    fn envelope_rejects_large_samples() {
        assert!(Envelope::new(vec![c(0.8, 0.8)]).is_err());
        assert!(Envelope::new(vec![c(1.0, 0.0), c(0.0, -1.0)]).is_ok());
    }

    #[test]
    fn sample_quantization_full_scale() {
        assert_eq!(quantize_sample(c(1.0, -1.0)), (32767, -32767));
        assert_eq!(quantize_sample(c(0.5, 0.0)), (16384, 0));
        assert_eq!(dequantize_sample((32767, 0)), c(1.0, 0.0));
    }

    #[test]
    fn memory_write_is_differential() {
        let mut mem = EnvelopeMemory::new(16);
        assert_eq!(mem.write(0, &[(1, 1), (2, 2)]).unwrap(), 8);
        assert_eq!(mem.write(0, &[(1, 1), (2, 2)]).unwrap(), 0);
        assert_eq!(mem.write(1, &[(2, 2), (3, 3)]).unwrap(), 4);
        assert_eq!(mem.log().bytes_written(), 12);
    }

    #[test]
    fn mux_single_and_linear() {
        let tone: Vec<_> = modulate(&vec![c(0.25, 0.0); 16], 1.0, 1 << 20, 0);
        let one = mux_readout(&[(0, &tone)]);
        assert_eq!(one.samples, tone);
        let two = mux_readout(&[(0, &tone), (0, &tone)]);
        for (a, b) in two.samples.iter().zip(&tone) {
            assert!(close(*a, *b * 2.0, 1e-15));
        }
        assert!(!two.saturated);
    }

    #[test]
    fn mux_distinct_tones_match_superposition() {
        let env = vec![c(0.4, 0.0); 64];
        let t1 = modulate(&env, 1.0, 1 << 20, 0);
        let t2 = modulate(&env, 1.0, 3 << 19, 100);
        let out = mux_readout(&[(0, &t1), (10, &t2)]);
        assert_eq!(out.samples.len(), 74);
        // Independent re-synthesis: evaluate both carriers directly.
        for n in 0..74 {
            let mut expect = c(0.0, 0.0);
            if n < 64 {
                expect += 0.4 * Complex64::cis(TAU * (n as f64) / 16.0);
            }
            if (10..74).contains(&n) {
                let k = (n - 10) as f64;
                expect += 0.4 * Complex64::cis(TAU * (k * 3.0 / 32.0 + 100.0 / 16384.0));
            }
            assert!(close(out.samples[n], expect, 1e-12), "n={n}");
        }
    }

    #[test]
    fn mux_reports_saturation() {
        let a = vec![c(0.7, 0.0); 4];
        let out = mux_readout(&[(0, &a), (2, &a)]);
        assert!(out.saturated);
        assert!(close(out.samples[2], c(1.4, 0.0), 1e-15));
    }

    #[test]
    fn zero_adc_integrates_to_zero() {
        let iq = mix_and_integrate(&[0.0; 100], 1 << 20, 10, 50).unwrap();
        assert_eq!(iq, IqPoint::new(0.0, 0.0));
    }

    #[test]
    fn window_must_fit() {
        assert!(matches!(
            mix_and_integrate(&[0.0; 10], 0, 5, 6),
            Err(DspError::WindowOutOfRange { .. })
        ));
    }

    #[test]
    fn discriminator_examples() {
        let d = Discriminator::default();
        assert_eq!(d.discriminate(IqPoint::new(0.0, 1.0)), 0);
        assert_eq!(d.discriminate(IqPoint::new(0.0, -1.0)), 1);
        assert_eq!(d.discriminate(IqPoint::new(3.0, 0.0)), 1, "tie resolves to 1");
        // e^{j pi/2} * (-1) = -j
        let quarter = Discriminator {
            rotation: FRAC_PI_2,
            offset: IqPoint::default(),
        };
        let z = Complex64::cis(FRAC_PI_2) * c(-1.0, 0.0);
        assert!(z.im < 0.0);
        assert_eq!(quarter.discriminate(IqPoint::new(-1.0, 0.0)), 1);
        let back = Discriminator {
            rotation: -FRAC_PI_2,
            offset: IqPoint::default(),
        };
        assert_eq!(back.discriminate(IqPoint::new(-1.0, 0.0)), 0);
    }

    #[test]
    fn discriminator_offset_shifts_boundary() {
        let d = Discriminator {
            rotation: 0.0,
            offset: IqPoint::new(0.0, 2.0),
        };
        assert_eq!(d.discriminate(IqPoint::new(0.0, 1.0)), 1);
        assert_eq!(d.discriminate(IqPoint::new(0.0, 3.0)), 0);
        let flipped = Discriminator {
            rotation: PI,
            offset: IqPoint::default(),
        };
        assert_eq!(flipped.discriminate(IqPoint::new(0.0, 1.0)), 1);
    }

    #[test]
    fn acquisition_truncates() {
        let stream: Vec<f64> = (0..16).map(|k| k as f64).collect();
        let full = acquire(Tap::Adc, &stream, 32);
        assert_eq!(full.samples, stream);
        assert!(!full.truncated);
        let cut = acquire(Tap::Adc, &stream, 8);
        assert_eq!(cut.samples, &stream[..8]);
        assert!(cut.truncated);
    }

    #[test]
    fn dac_tap_equals_synth_output() {
        let env: Vec<_> = (0..48).map(|k| c((k as f64 / 48.0).sin(), 0.0)).collect();
        let mut mem = memory_with(&env);
        let cmd = PulseCommand {
            freq_word: 777_777,
            phase_word: 4000,
            amp_word: 700,
            length: 48,
            env_addr: 0,
        };
        let out = synth_pulse(&cmd, &mut mem).unwrap();
        let tap = acquire(Tap::Dac, &out, 4096);
        assert_eq!(tap.samples, out);
    }

    #[test]
    fn dlo_matches_mixer() {
        let adc: Vec<f64> = (0..64).map(|n| (n as f64 * 0.37).cos()).collect();
        let lo = dlo(5_000_000, 3, 40);
        let direct: Complex64 = (3..43).map(|n| adc[n] * lo[n - 3]).sum();
        let iq = mix_and_integrate(&adc, 5_000_000, 3, 40).unwrap();
        assert!(close(iq.to_complex(), direct, 1e-12));
    }

    #[test]
    fn waveform_csv_format() {
        let mut buf = Vec::new();
        write_waveform_csv(&mut buf, &[c(1.0, -0.5)], 7).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "n,i,q\n7,1,-0.5\n");
    }
}
