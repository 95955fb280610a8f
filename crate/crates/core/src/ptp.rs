// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! Simplified precision-time-protocol exchange between a primary and a
//! secondary clock.
//!
//! The primary sends Sync at `t1` (primary time), the secondary receives it
//! at `t2` (secondary time), replies at `t3`, and the primary receives the
//! reply at `t4`. Timestamps are integer ticks; both clocks share a
//! reference so there is no drift.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PtpError {
    #[error("{name} must be nonnegative, got {value}")]
    Negative { name: &'static str, value: i64 },
    #[error("invalid range for {name}: [{lo}, {hi}]")]
    Range { name: &'static str, lo: i64, hi: i64 },
    #[error("trials must be at least 1")]
    NoTrials,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Primary,
    Secondary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockNode {
    pub role: Role,
    /// Ticks ahead of the primary.
    pub true_offset: i64,
}

impl ClockNode {
    pub fn primary() -> Self {
        ClockNode {
            role: Role::Primary,
            true_offset: 0,
        }
    }

    pub fn secondary(true_offset: i64) -> Self {
        ClockNode {
            role: Role::Secondary,
            true_offset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PtpExchange {
    pub t1: i64,
    pub t2: i64,
    pub t3: i64,
    pub t4: i64,
}

impl PtpExchange {
    pub fn timestamps(&self) -> (i64, i64, i64, i64) {
        (self.t1, self.t2, self.t3, self.t4)
    }
}

pub fn simulate_exchange(
    offset: i64,
    d_ps: i64,
    d_sp: i64,
    p: i64,
    t1: i64,
) -> Result<PtpExchange, PtpError> {
    for (name, value) in [("d_ps", d_ps), ("d_sp", d_sp), ("p", p)] {
        if value < 0 {
            return Err(PtpError::Negative { name, value });
        }
    }
    let t2 = t1 + d_ps + offset;
    let t3 = t2 + p;
    let t4 = t3 + d_sp - offset;
    Ok(PtpExchange { t1, t2, t3, t4 })
}

/// `((t4 - t1) - (t3 - t2)) / 2`, rounding toward zero.
pub fn compute_delay(x: &PtpExchange) -> i64 {
    ((x.t4 - x.t1) - (x.t3 - x.t2)) / 2
}

/// `((t2 - t1) - (t4 - t3)) / 2`, rounding toward zero.
pub fn compute_offset(x: &PtpExchange) -> i64 {
    ((x.t2 - x.t1) - (x.t4 - x.t3)) / 2
}

pub fn apply_correction(secondary: ClockNode, offset_estimate: i64) -> ClockNode {
    ClockNode {
        true_offset: secondary.true_offset - offset_estimate,
        ..secondary
    }
}

/// Inclusive integer range to draw uniformly from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickRange {
    pub lo: i64,
    pub hi: i64,
}

impl TickRange {
    pub fn fixed(v: i64) -> Self {
        TickRange { lo: v, hi: v }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> i64 {
        rng.random_range(self.lo..=self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub trials: usize,
    pub offset: TickRange,
    pub delay: TickRange,
    /// Extra primary-to-secondary delay; an asymmetry of `2a` gives residual `a`.
    pub asymmetry: TickRange,
    pub processing: TickRange,
    pub seed: u64,
}

impl TrialConfig {
    pub fn validate(&self) -> Result<(), PtpError> {
        if self.trials == 0 {
            return Err(PtpError::NoTrials);
        }
        for (name, r) in [
            ("offset", self.offset),
            ("delay", self.delay),
            ("asymmetry", self.asymmetry),
            ("processing", self.processing),
        ] {
            if r.lo > r.hi {
                return Err(PtpError::Range {
                    name,
                    lo: r.lo,
                    hi: r.hi,
                });
            }
        }
        for (name, r) in [("delay", self.delay), ("processing", self.processing)] {
            if r.lo < 0 {
                return Err(PtpError::Negative { name, value: r.lo });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub trial: usize,
    pub d_ps: i64,
    pub d_sp: i64,
    pub true_offset: i64,
    pub estimated_offset: i64,
    pub estimated_delay: i64,
    /// `estimated_offset - true_offset`.
    pub residual: i64,
    /// Offset left on the secondary after correction.
    pub corrected_offset: i64,
}

/// Runs `cfg.trials` exchanges. The path asymmetry `s` is drawn from
/// `cfg.asymmetry` and applied as `d_ps = d + s`, `d_sp = d`.
pub fn run_trials(cfg: &TrialConfig) -> Result<Vec<Trial>, PtpError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let offset = cfg.offset.sample(&mut rng);
        let d = cfg.delay.sample(&mut rng);
        let s = cfg.asymmetry.sample(&mut rng);
        let p = cfg.processing.sample(&mut rng);
        let t1 = rng.random_range(0..1_000_000);
        let (d_ps, d_sp) = (d + s, d);
        let x = simulate_exchange(offset, d_ps, d_sp, p, t1)?;
        let estimated_offset = compute_offset(&x);
        let corrected = apply_correction(ClockNode::secondary(offset), estimated_offset);
        out.push(Trial {
            trial,
            d_ps,
            d_sp,
            true_offset: offset,
            estimated_offset,
            estimated_delay: compute_delay(&x),
            residual: estimated_offset - offset,
            corrected_offset: corrected.true_offset,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn degenerate_exchange() {
        let x = simulate_exchange(0, 0, 0, 0, 0).unwrap();
        assert_eq!(x.timestamps(), (0, 0, 0, 0));
        assert_eq!(compute_delay(&x), 0);
        assert_eq!(compute_offset(&x), 0);
    }

    #[test]
    fn exchange_examples() {
        let x = simulate_exchange(10, 20, 20, 30, 0).unwrap();
        assert_eq!(x.timestamps(), (0, 30, 60, 70));
        assert_eq!(compute_delay(&x), 20);
        assert_eq!(compute_offset(&x), 10);
        let y = simulate_exchange(-5, 7, 7, 1, 100).unwrap();
        assert_eq!(y.timestamps(), (100, 102, 103, 115));
    }

    #[test]
    fn negative_delay_rejected() {
        assert_eq!(
            simulate_exchange(0, -1, 0, 0, 0),
            Err(PtpError::Negative {
                name: "d_ps",
                value: -1
            })
        );
    }

    #[test]
    fn asymmetric_delay_is_path_mean() {
        let x = simulate_exchange(0, 10, 30, 0, 0).unwrap();
        assert_eq!(compute_delay(&x), 20);
    }

    #[test]
    fn correction_examples() {
        let x = simulate_exchange(10, 20, 20, 5, 0).unwrap();
        let fixed = apply_correction(ClockNode::secondary(10), compute_offset(&x));
        assert_eq!(fixed.true_offset, 0);
        assert_eq!(apply_correction(ClockNode::secondary(0), 0).true_offset, 0);
        let y = simulate_exchange(10, 10, 30, 0, 0).unwrap();
        let est = compute_offset(&y);
        assert_eq!(est - 10, (10 - 30) / 2);
        assert_eq!(apply_correction(ClockNode::secondary(10), est).true_offset, 10);
    }

    #[test]
    fn odd_difference_truncates_toward_zero() {
        let x = PtpExchange {
            t1: 0,
            t2: 0,
            t3: 0,
            t4: -3,
        };
        assert_eq!(compute_delay(&x), -1);
        assert_eq!(compute_offset(&x), 1);
    }

    #[test]
    fn zero_trials_rejected() {
        let cfg = TrialConfig {
            trials: 0,
            offset: TickRange::fixed(0),
            delay: TickRange::fixed(0),
            asymmetry: TickRange::fixed(0),
            processing: TickRange::fixed(0),
            seed: 1,
        };
        assert_eq!(run_trials(&cfg), Err(PtpError::NoTrials));
    }

    proptest! {
        #[test]
        fn symmetric_roundtrip(o in -1_000_000i64..1_000_000, d in 0i64..100_000,
                               p in 0i64..100_000, t1 in -1_000_000i64..1_000_000) {
            let x = simulate_exchange(o, d, d, p, t1).unwrap();
            prop_assert_eq!(compute_offset(&x), o);
            prop_assert_eq!(compute_delay(&x), d);
        }

        #[test]
        fn residual_is_half_asymmetry(o in -10_000i64..10_000, d in 0i64..10_000,
                                      a in -5_000i64..5_000, p in 0i64..1000) {
            let (d_ps, d_sp) = (d + 2 * a.max(-d / 2), d);
            let x = simulate_exchange(o, d_ps, d_sp, p, 0).unwrap();
            prop_assert_eq!(compute_offset(&x) - o, (d_ps - d_sp) / 2);
        }

        #[test]
        fn delay_nonnegative(o in -1000i64..1000, a in 0i64..1000, b in 0i64..1000, p in 0i64..1000) {
            let x = simulate_exchange(o, a, b, p, 0).unwrap();
            prop_assert!(compute_delay(&x) >= 0);
        }
    }
}
