// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! Browser bindings for the demo page: pulse synthesis from envelope memory,
//! a demodulation detuning sweep, and the two-qubit feedback circuits.

use wasm_bindgen::prelude::*;

use qubitctl_core::compiler::calibration::EnvelopeSpec;
use qubitctl_core::demos;
use qubitctl_core::dsp::{mix_and_integrate, quantize_sample, synth_pulse, EnvelopeMemory};
use qubitctl_core::isa::{quantize_amp, quantize_freq, quantize_phase, PulseCommand, ENVELOPE_CAPACITY};
use qubitctl_core::runner::{Mode, RunConfig};

fn shape(kind: &str, length: u32, sigma: f64) -> Result<EnvelopeSpec, String> {
    match kind {
        "gaussian" => Ok(EnvelopeSpec::Gaussian { length, sigma }),
        "square" => Ok(EnvelopeSpec::Square { length }),
        "cosine" => Ok(EnvelopeSpec::Cosine { length }),
        _ => Err(format!("unknown envelope shape {kind:?}")),
    }
}

/// Interleaved `[i0, q0, i1, q1, ...]` of one synthesized pulse.
pub fn synth(kind: &str, length: u32, sigma: f64, amp: f64, freq_hz: f64, phase: f64, fs_hz: f64) -> Result<Vec<f64>, String> {
    if length == 0 || length as usize > ENVELOPE_CAPACITY {
        return Err(format!("length must be in 1..={ENVELOPE_CAPACITY}"));
    }
    let spec = shape(kind, length, sigma)?;
    let env = spec.envelope()?;
    let mut mem = EnvelopeMemory::new(ENVELOPE_CAPACITY);
    let q: Vec<_> = env.samples().iter().map(|&s| quantize_sample(s)).collect();
    mem.write(0, &q).map_err(|e| e.to_string())?;
    let cmd = PulseCommand {
        freq_word: quantize_freq(freq_hz, fs_hz).map_err(|e| e.to_string())?,
        phase_word: quantize_phase(phase),
        amp_word: quantize_amp(amp).map_err(|e| e.to_string())?,
        length: length as u16,
        env_addr: 0,
    };
    let out = synth_pulse(&cmd, &mut mem).map_err(|e| e.to_string())?;
    Ok(out.iter().flat_map(|s| [s.re, s.im]).collect())
}

/// `|IQ| / (N/2)` for unit tones spaced evenly over `cycles +- span/2`
/// cycles per window, demodulated at `cycles` cycles per window.
pub fn sweep(n: usize, cycles: f64, span: f64, points: usize) -> Result<Vec<f64>, String> {
    if !n.is_power_of_two() || n > 1 << 16 || points < 2 {
        return Err("window must be a power of two up to 65536, with at least 2 points".into());
    }
    let full = (1u64 << 24) as f64;
    let word = (cycles / n as f64 * full).round() as u32;
    (0..points)
        .map(|k| {
            let c = cycles - span / 2.0 + span * k as f64 / (points - 1) as f64;
            let f = c / n as f64;
            let adc: Vec<f64> = (0..n).map(|m| (std::f64::consts::TAU * f * m as f64).cos()).collect();
            mix_and_integrate(&adc, word, 0, n)
                .map(|iq| iq.magnitude() / (n as f64 / 2.0))
                .map_err(|e| e.to_string())
        })
        .collect()
}

/// Runs a demo circuit and returns the report as JSON.
pub fn demo(name: &str, shots: u32, seed: u32, sigma: f64, waveform: bool) -> Result<String, String> {
    let circuit = demos::CIRCUITS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, c)| *c)
        .ok_or_else(|| format!("unknown demo {name:?}"))?;
    if !(0.0..=10.0).contains(&sigma) {
        return Err("sigma must be in [0, 10]".into());
    }
    let mut cal = demos::calibration();
    cal.qubits.values_mut().for_each(|q| q.model.noise_sigma = sigma);
    let (_, runner) = demos::build(circuit, &cal, &demos::hardware()).map_err(|e| e.to_string())?;
    let cfg = RunConfig {
        shots: shots.clamp(1, 100_000) as u64,
        seed: seed as u64,
        mode: if waveform { Mode::Waveform } else { Mode::IdealIq },
        ..Default::default()
    };
    runner.run(&cfg).map(|r| r.to_json()).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn synth_waveform(kind: &str, length: u32, sigma: f64, amp: f64, freq_mhz: f64, phase: f64, fs_ghz: f64) -> Result<Vec<f64>, JsValue> {
    synth(kind, length, sigma, amp, freq_mhz * 1e6, phase, fs_ghz * 1e9).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn demod_sweep(n: usize, cycles: f64, span: f64, points: usize) -> Result<Vec<f64>, JsValue> {
    sweep(n, cycles, span, points).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn run_demo(name: &str, shots: u32, seed: u32, sigma: f64, waveform: bool) -> Result<String, JsValue> {
    demo(name, shots, seed, sigma, waveform).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn demo_names() -> Vec<String> {
    demos::CIRCUITS.iter().map(|(n, _)| n.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn square_pulse_is_a_carrier() {
        let w = synth("square", 64, 0.0, 0.5, 0.0, 0.0, 8e9).unwrap();
        assert_eq!(w.len(), 128);
        let mag = Complex64::new(w[0], w[1]).norm();
        assert!((mag - 0.5).abs() < 1e-4, "{mag}");
        assert!(synth("triangle", 64, 0.0, 0.5, 0.0, 0.0, 8e9).is_err());
        assert!(synth("square", 0, 0.0, 0.5, 0.0, 0.0, 8e9).is_err());
    }

    #[test]
    fn sweep_peaks_on_bin_and_nulls_a_cycle_away() {
        let s = sweep(256, 16.0, 4.0, 5).unwrap();
        assert!((s[2] - 1.0).abs() < 1e-9);
        assert!(s[1] < 1e-9 && s[3] < 1e-9);
    }

    #[test]
    fn demos_run() {
        for name in demo_names() {
            let json = demo(&name, 20, 1, 0.0, false).unwrap();
            assert!(json.contains("\"shots\": 20"), "{json}");
        }
        assert!(demo("nope", 1, 0, 0.0, false).is_err());
    }
}
