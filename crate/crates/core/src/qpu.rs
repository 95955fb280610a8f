// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! Stochastic product-state qubit model answering drive pulses and readouts.
//!
//! A resonant drive rotates its qubit by `pi/2 * area / area_X90` about the
//! axis at the pulse phase, where `area` is the sum of envelope magnitudes
//! times amplitude. A readout samples the bit from `|c1|^2`, collapses the
//! state, and answers with `A e^{+j theta_d}` for 0 or `A e^{-j theta_d}`
//! for 1, plus complex Gaussian noise.

use std::f64::consts::{FRAC_PI_2, TAU};

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dsp::IqPoint;

/// Streams per shot reserved for qubit RNGs.
const STREAMS_PER_SHOT: u64 = 64;
const NOISE_SEED_SALT: u64 = 0x6e6f_6973_6500_0000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitState {
    pub c0: Complex64,
    pub c1: Complex64,
}

impl Default for QubitState {
    fn default() -> Self {
        QubitState {
            c0: Complex64::new(1.0, 0.0),
            c1: Complex64::new(0.0, 0.0),
        }
    }
}

impl QubitState {
    pub fn p1(&self) -> f64 {
        self.c1.norm_sqr()
    }

    pub fn norm(&self) -> f64 {
        self.c0.norm_sqr() + self.c1.norm_sqr()
    }

    /// `exp(-j theta/2 (cos(phi) X + sin(phi) Y))`.
    pub fn rotate(&mut self, theta: f64, phi: f64) {
        let (s, c) = (theta / 2.0).sin_cos();
        let mj = Complex64::new(0.0, -1.0);
        let c0 = self.c0 * c + mj * Complex64::cis(-phi) * s * self.c1;
        let c1 = mj * Complex64::cis(phi) * s * self.c0 + self.c1 * c;
        self.c0 = c0;
        self.c1 = c1;
        debug_assert!((self.norm() - 1.0).abs() < 1e-12);
    }

    pub fn collapse(&mut self, bit: u8) {
        *self = QubitState::default();
        if bit == 1 {
            std::mem::swap(&mut self.c0, &mut self.c1);
        }
    }
}

/// Per-qubit model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct QubitParams {
    pub name: String,
    pub drive_freq: f64,
    pub tolerance_hz: f64,
    /// Envelope-magnitude sum times amplitude of the X90 template.
    pub x90_area: f64,
    pub readout_amp: f64,
    pub dispersive_phase: f64,
    pub noise_sigma: f64,
}

impl QubitParams {
    /// Noiseless readout point for `bit`.
    pub fn readout_point(&self, bit: u8) -> Complex64 {
        let phi = if bit == 0 { self.dispersive_phase } else { -self.dispersive_phase };
        self.readout_amp * Complex64::cis(phi)
    }
}

/// Model state for one shot.
#[derive(Debug, Clone)]
pub struct QpuModel {
    pub params: Vec<QubitParams>,
    pub states: Vec<QubitState>,
    rngs: Vec<ChaCha8Rng>,
    noise: ChaCha8Rng,
}

impl QpuModel {
    /// Each qubit draws from its own stream so that results do not depend on
    /// the order in which qubits are measured.
    pub fn new(params: Vec<QubitParams>, seed: u64, shot: u64) -> Self {
        let rngs = (0..params.len())
            .map(|q| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(shot * STREAMS_PER_SHOT + q as u64);
                r
            })
            .collect();
        let mut noise = ChaCha8Rng::seed_from_u64(seed ^ NOISE_SEED_SALT);
        noise.set_stream(shot);
        QpuModel {
            states: vec![QubitState::default(); params.len()],
            params,
            rngs,
            noise,
        }
    }

    /// Applies a drive of the given area; returns whether it was resonant.
    pub fn apply_drive(&mut self, q: usize, area: f64, freq_hz: f64, phase: f64) -> bool {
        let p = &self.params[q];
        if (freq_hz - p.drive_freq).abs() > p.tolerance_hz || area == 0.0 {
            return false;
        }
        let theta = FRAC_PI_2 * area / p.x90_area;
        self.states[q].rotate(theta, phase.rem_euclid(TAU));
        true
    }

    /// Samples and collapses the bit of qubit `q`.
    pub fn measure(&mut self, q: usize) -> u8 {
        let u: f64 = self.rngs[q].random();
        let bit = (u < self.states[q].p1()) as u8;
        self.states[q].collapse(bit);
        bit
    }

    /// A standard normal draw from the noise stream, scaled by `sigma`.
    pub fn gaussian(&mut self, sigma: f64) -> f64 {
        if sigma == 0.0 {
            return 0.0;
        }
        Normal::new(0.0, sigma).expect("finite sigma").sample(&mut self.noise)
    }

    /// Ideal-iq answer to a readout of `q` that returned `bit`.
    pub fn iq(&mut self, q: usize, bit: u8) -> IqPoint {
        let sigma = self.params[q].noise_sigma;
        let z = self.params[q].readout_point(bit);
        let n = Complex64::new(self.gaussian(sigma), self.gaussian(sigma));
        (z + n).into()
    }
}
