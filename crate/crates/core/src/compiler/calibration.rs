// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! Calibration document: per-qubit frequencies, gate pulse templates,
//! readout and discrimination settings, QPU-model parameters, and named
//! envelope shapes.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::hardware::{ChannelKind, ChannelMap};
use super::CompileError;
use crate::dsp::{Discriminator, Envelope, IqPoint};
use crate::isa::LENGTH_MAX;

pub const DEFAULT_FEEDBACK_LATENCY: u64 = 64;
pub const DEFAULT_FPROC_LATENCY: u64 = 8;
pub const DEFAULT_READOUT_DELAY: u64 = 16;
pub const DEFAULT_DRIVE_TOLERANCE_HZ: f64 = 1e6;
/// Cycles a core needs between a result landing in its mailbox and the
/// first conditional pulse: read (5) + compare branch (5).
pub const BRANCH_OVERHEAD: u64 = 10;

/// Named envelope shape at unit peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum EnvelopeSpec {
    Gaussian { length: u32, sigma: f64 },
    Square { length: u32 },
    /// Raised cosine (Hann window).
    Cosine { length: u32 },
    /// Explicit `[i, q]` pairs.
    Samples(Vec<[f64; 2]>),
}

impl EnvelopeSpec {
    pub fn len(&self) -> usize {
        match self {
            EnvelopeSpec::Gaussian { length, .. }
            | EnvelopeSpec::Square { length }
            | EnvelopeSpec::Cosine { length } => *length as usize,
            EnvelopeSpec::Samples(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn samples(&self) -> Vec<Complex64> {
        match self {
            EnvelopeSpec::Gaussian { length, sigma } => {
                let mid = (*length as f64 - 1.0) / 2.0;
                (0..*length)
                    .map(|n| {
                        let x = (n as f64 - mid) / sigma;
                        Complex64::new((-0.5 * x * x).exp(), 0.0)
                    })
                    .collect()
            }
            EnvelopeSpec::Square { length } => vec![Complex64::new(1.0, 0.0); *length as usize],
            EnvelopeSpec::Cosine { length } => {
                let l = *length as f64;
                (0..*length)
                    .map(|n| Complex64::new(0.5 - 0.5 * (2.0 * PI * (n as f64 + 0.5) / l).cos(), 0.0))
                    .collect()
            }
            EnvelopeSpec::Samples(s) => s.iter().map(|&[i, q]| Complex64::new(i, q)).collect(),
        }
    }

    pub fn envelope(&self) -> Result<Envelope, String> {
        if let EnvelopeSpec::Gaussian { sigma, .. } = self {
            if !(*sigma > 0.0) {
                return Err(format!("gaussian sigma must be positive, got {sigma}"));
            }
        }
        Envelope::new(self.samples()).map_err(|e| e.to_string())
    }
}

fn default_channel_role() -> String {
    "drive".into()
}

/// One pulse of a gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseTemplate {
    pub env: String,
    pub amp: f64,
    #[serde(default)]
    pub phase: f64,
    /// `drive`, `readout`, or an explicit channel name.
    #[serde(default = "default_channel_role")]
    pub channel: String,
    /// Carrier override; defaults to the qubit frequency for the role.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq: Option<f64>,
    /// Samples; defaults to the envelope length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<u32>,
    /// Target qubit, only for multi-qubit gates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qubit: Option<String>,
}

fn default_delay() -> u64 {
    DEFAULT_READOUT_DELAY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutCal {
    pub env: String,
    pub amp: f64,
    #[serde(default)]
    pub phase: f64,
    /// Integration window in demod-channel samples.
    pub window: u32,
    /// Ticks from the readout tone to the start of the window.
    #[serde(default = "default_delay")]
    pub delay: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorCal {
    #[serde(default)]
    pub rotation: f64,
    #[serde(default)]
    pub offset: [f64; 2],
}

impl DiscriminatorCal {
    pub fn discriminator(&self) -> Discriminator {
        Discriminator {
            rotation: self.rotation,
            offset: IqPoint::new(self.offset[0], self.offset[1]),
        }
    }
}

fn one() -> f64 {
    1.0
}

fn quarter_turn() -> f64 {
    FRAC_PI_2
}

/// Stochastic qubit model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCal {
    #[serde(default = "one")]
    pub readout_amp: f64,
    #[serde(default = "quarter_turn")]
    pub dispersive_phase: f64,
    #[serde(default)]
    pub noise_sigma: f64,
}

impl Default for ModelCal {
    fn default() -> Self {
        ModelCal {
            readout_amp: 1.0,
            dispersive_phase: FRAC_PI_2,
            noise_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitCal {
    pub drive_freq: f64,
    pub readout_freq: f64,
    pub gates: BTreeMap<String, Vec<PulseTemplate>>,
    pub readout: ReadoutCal,
    #[serde(default)]
    pub discriminator: DiscriminatorCal,
    #[serde(default)]
    pub model: ModelCal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiQubitGate {
    pub name: String,
    pub qubits: Vec<String>,
    /// Each template names its `qubit`.
    pub pulses: Vec<PulseTemplate>,
}

fn default_feedback() -> u64 {
    DEFAULT_FEEDBACK_LATENCY
}

fn default_fproc() -> u64 {
    DEFAULT_FPROC_LATENCY
}

fn default_tolerance() -> f64 {
    DEFAULT_DRIVE_TOLERANCE_HZ
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSet {
    /// Ticks from the end of a readout window to the earliest dependent pulse.
    #[serde(default = "default_feedback")]
    pub feedback_latency: u64,
    /// Ticks from the end of a readout window to the result reaching the cores.
    #[serde(default = "default_fproc")]
    pub fproc_latency: u64,
    #[serde(default = "default_tolerance")]
    pub drive_tolerance_hz: f64,
    #[serde(default)]
    pub seed: u64,
    pub envelopes: BTreeMap<String, EnvelopeSpec>,
    pub qubits: BTreeMap<String, QubitCal>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gates: Vec<MultiQubitGate>,
}

impl CalibrationSet {
    pub fn from_json(text: &str) -> Result<Self, CompileError> {
        serde_json::from_str(text).map_err(|e| CompileError::Calibration(e.to_string()))
    }

    pub fn qubit(&self, name: &str) -> Option<&QubitCal> {
        self.qubits.get(name)
    }

    pub fn multi_gate(&self, name: &str, qubits: &[String]) -> Option<&MultiQubitGate> {
        self.gates
            .iter()
            .find(|g| g.name == name && g.qubits == qubits)
    }

    /// Samples of a named envelope.
    pub fn envelope_samples(&self, name: &str) -> Option<Vec<Complex64>> {
        self.envelopes.get(name).map(|e| e.samples())
    }

    /// Checks internal consistency and consistency with the channel map.
    pub fn validate(&self, map: &ChannelMap) -> Result<(), CompileError> {
        let bad = |m: String| Err(CompileError::Calibration(m));
        for (name, spec) in &self.envelopes {
            if spec.is_empty() || spec.len() > LENGTH_MAX as usize {
                return bad(format!(
                    "envelope {name}: length {} outside 1..={LENGTH_MAX}",
                    spec.len()
                ));
            }
            if let Err(e) = spec.envelope() {
                return bad(format!("envelope {name}: {e}"));
            }
        }
        if self.feedback_latency < self.fproc_latency + BRANCH_OVERHEAD {
            return bad(format!(
                "feedback_latency {} must be at least fproc_latency + {BRANCH_OVERHEAD} = {}",
                self.feedback_latency,
                self.fproc_latency + BRANCH_OVERHEAD
            ));
        }
        for q in &map.qubits {
            if !self.qubits.contains_key(q) {
                return bad(format!("qubit {q} from the hardware config has no calibration"));
            }
        }
        for (q, cal) in &self.qubits {
            if map.core_of(q).is_none() {
                return bad(format!("calibrated qubit {q} has no channels in the hardware config"));
            }
            for (gate, templates) in &cal.gates {
                for (i, t) in templates.iter().enumerate() {
                    self.check_template(t, &format!("{q}.gates.{gate}[{i}]"))?;
                    if t.qubit.is_some() {
                        return bad(format!("{q}.gates.{gate}[{i}]: qubit is only valid in multi-qubit gates"));
                    }
                }
            }
            let r = &cal.readout;
            self.check_env_ref(&r.env, None, &format!("{q}.readout"))?;
            self.check_amp(r.amp, &format!("{q}.readout"))?;
            if r.delay < 4 {
                return bad(format!("{q}.readout.delay must be at least 4 ticks"));
            }
            if r.window == 0 || r.window > LENGTH_MAX as u32 {
                return bad(format!("{q}.readout.window must be in 1..={LENGTH_MAX}"));
            }
            for kind in [ChannelKind::ReadoutDrive, ChannelKind::ReadoutDemod] {
                if map.qubit_channel(q, kind).is_none() {
                    return bad(format!("qubit {q} has no {kind:?} channel"));
                }
            }
            if !(cal.model.noise_sigma >= 0.0) || !cal.model.readout_amp.is_finite() {
                return bad(format!("{q}.model: noise_sigma must be >= 0 and readout_amp finite"));
            }
        }
        for g in &self.gates {
            for q in &g.qubits {
                if !self.qubits.contains_key(q) {
                    return bad(format!("gate {}: unknown qubit {q}", g.name));
                }
            }
            for (i, t) in g.pulses.iter().enumerate() {
                let path = format!("gates.{}[{i}]", g.name);
                self.check_template(t, &path)?;
                match &t.qubit {
                    Some(q) if g.qubits.contains(q) => {}
                    _ => return bad(format!("{path}: qubit must name one of the gate's qubits")),
                }
            }
        }
        Ok(())
    }

    fn check_amp(&self, amp: f64, path: &str) -> Result<(), CompileError> {
        if !(0.0..1.0).contains(&amp) {
            return Err(CompileError::Calibration(format!(
                "{path}: amplitude {amp} outside [0, 1)"
            )));
        }
        Ok(())
    }

    fn check_env_ref(&self, env: &str, length: Option<u32>, path: &str) -> Result<(), CompileError> {
        let Some(spec) = self.envelopes.get(env) else {
            return Err(CompileError::Calibration(format!("{path}: unknown envelope {env}")));
        };
        if let Some(l) = length {
            if l == 0 || l as usize > spec.len() {
                return Err(CompileError::Calibration(format!(
                    "{path}: length {l} exceeds envelope {env} of {} samples",
                    spec.len()
                )));
            }
        }
        Ok(())
    }

    fn check_template(&self, t: &PulseTemplate, path: &str) -> Result<(), CompileError> {
        self.check_env_ref(&t.env, t.length, path)?;
        self.check_amp(t.amp, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::hardware::HardwareConfig;

    const CAL: &str = r#"{
  "envelopes": {
    "x90": {"gaussian": {"length": 64, "sigma": 16}},
    "ro": {"square": {"length": 128}},
    "cos": {"cosine": {"length": 8}},
    "raw": {"samples": [[0.5, 0.0], [0.0, 0.5]]}
  },
  "qubits": {
    "Q0": {
      "drive_freq": 4e9, "readout_freq": 125e6,
      "gates": {"X90": [{"env": "x90", "amp": 0.5}]},
      "readout": {"env": "ro", "amp": 0.4, "window": 128}
    }
  }
}"#;

    const HW: &str = r#"{"channels": [
  {"name": "d", "kind": "qubit-drive", "qubit": "Q0", "dac": 0, "sample_rate": 8e9},
  {"name": "r", "kind": "readout-drive", "qubit": "Q0", "dac": 1, "sample_rate": 2e9},
  {"name": "m", "kind": "readout-demod", "qubit": "Q0", "adc": 0, "sample_rate": 2e9}
]}"#;

    fn map() -> ChannelMap {
        HardwareConfig::from_json(HW).unwrap().resolve().unwrap()
    }

    #[test]
    fn defaults() {
        let cal = CalibrationSet::from_json(CAL).unwrap();
        cal.validate(&map()).unwrap();
        assert_eq!(cal.feedback_latency, 64);
        assert_eq!(cal.fproc_latency, 8);
        let q = cal.qubit("Q0").unwrap();
        assert_eq!(q.readout.delay, 16);
        assert_eq!(q.gates["X90"][0].channel, "drive");
        assert_eq!(q.model.dispersive_phase, FRAC_PI_2);
    }

    #[test]
    fn envelope_shapes() {
        let g = EnvelopeSpec::Gaussian { length: 5, sigma: 1.0 }.samples();
        assert_eq!(g[2], Complex64::new(1.0, 0.0));
        assert!((g[0].re - (-2.0f64).exp()).abs() < 1e-15);
        assert_eq!(g[1], g[3]);
        let c = EnvelopeSpec::Cosine { length: 8 }.samples();
        assert!(c.iter().all(|s| s.re > 0.0 && s.re <= 1.0));
        assert_eq!(EnvelopeSpec::Samples(vec![[0.1, 0.2]]).samples()[0], Complex64::new(0.1, 0.2));
        assert!(EnvelopeSpec::Samples(vec![[1.0, 1.0]]).envelope().is_err());
    }

    #[test]
    fn validation_errors_name_the_path() {
        let mut cal = CalibrationSet::from_json(CAL).unwrap();
        cal.qubits.get_mut("Q0").unwrap().gates.get_mut("X90").unwrap()[0].env = "nope".into();
        let err = cal.validate(&map()).unwrap_err().to_string();
        assert!(err.contains("Q0.gates.X90[0]: unknown envelope nope"), "{err}");

        let mut cal = CalibrationSet::from_json(CAL).unwrap();
        cal.feedback_latency = 10;
        assert!(cal.validate(&map()).is_err());

        let mut cal = CalibrationSet::from_json(CAL).unwrap();
        cal.qubits.get_mut("Q0").unwrap().readout.delay = 2;
        assert!(cal.validate(&map()).unwrap_err().to_string().contains("delay"));

        let mut cal = CalibrationSet::from_json(CAL).unwrap();
        cal.qubits.get_mut("Q0").unwrap().gates.get_mut("X90").unwrap()[0].amp = 1.0;
        assert!(cal.validate(&map()).unwrap_err().to_string().contains("[0, 1)"));
    }

    #[test]
    fn unknown_field_rejected() {
        let text = CAL.replace("\"envelopes\"", "\"bogus\": 1, \"envelopes\"");
        assert!(CalibrationSet::from_json(&text).is_err());
    }
}
