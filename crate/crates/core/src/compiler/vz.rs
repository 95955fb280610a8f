// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! Virtual Z: fold frame rotations into the phase of later drive pulses.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use super::hardware::ChannelKind;
use super::ir::{IrNode, IrProgram};
use super::CompileError;

type Frames = BTreeMap<String, f64>;

fn same_frame(a: f64, b: f64) -> bool {
    let d = (a - b).rem_euclid(TAU);
    d < 1e-12 || TAU - d < 1e-12
}

fn walk(nodes: Vec<IrNode>, frames: &mut Frames) -> Result<Vec<IrNode>, CompileError> {
    let mut out = Vec::with_capacity(nodes.len());
    for node in nodes {
        match node {
            IrNode::VirtualZ { qubit, phase } => {
                *frames.entry(qubit).or_default() += phase;
            }
            IrNode::Pulse(mut p) => {
                if p.kind == ChannelKind::QubitDrive {
                    if let Some(acc) = frames.get(&p.qubit) {
                        p.phase += acc;
                    }
                }
                out.push(IrNode::Pulse(p));
            }
            IrNode::IfElse(mut b) => {
                let mut then_frames = frames.clone();
                let mut else_frames = frames.clone();
                b.then_body = walk(std::mem::take(&mut b.then_body), &mut then_frames)?;
                b.else_body = walk(std::mem::take(&mut b.else_body), &mut else_frames)?;
                let keys: Vec<_> = then_frames.keys().chain(else_frames.keys()).cloned().collect();
                for q in keys {
                    let t = then_frames.get(&q).copied().unwrap_or(0.0);
                    let e = else_frames.get(&q).copied().unwrap_or(0.0);
                    if !same_frame(t, e) {
                        return Err(CompileError::Resolve {
                            pos: b.pos,
                            message: format!(
                                "branches leave qubit {q} with different virtual phases ({t} vs {e})"
                            ),
                        });
                    }
                }
                *frames = then_frames;
                out.push(IrNode::IfElse(b));
            }
            other => out.push(other),
        }
    }
    Ok(out)
}

/// Adds each qubit's accumulated virtual phase to its subsequent drive
/// pulses and drops the `VirtualZ` nodes. Readout pulses are not shifted.
pub fn apply_virtual_z(mut ir: IrProgram) -> Result<IrProgram, CompileError> {
    let mut frames = Frames::new();
    ir.nodes = walk(std::mem::take(&mut ir.nodes), &mut frames)?;
    Ok(ir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::ir::tests::resolve;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3};

    fn drive_phases(ir: &IrProgram) -> Vec<f64> {
        ir.pulses()
            .iter()
            .filter(|p| p.kind == ChannelKind::QubitDrive)
            .map(|p| p.phase)
            .collect()
    }

    #[test]
    fn identity_without_virtual_z() {
        let ir = resolve(r#"[{"gate":"X90","qubit":"Q0"},{"measure":"Q0","result":"m"}]"#).unwrap();
        assert_eq!(apply_virtual_z(ir.clone()).unwrap(), ir);
    }

    #[test]
    fn shifts_following_pulse() {
        let ir = resolve(r#"[{"virtual_z":"Q0","phase":1.5707963267948966},{"gate":"X90","qubit":"Q0"}]"#)
            .unwrap();
        let out = apply_virtual_z(ir).unwrap();
        assert_eq!(out.nodes.len(), 1);
        assert_eq!(drive_phases(&out), vec![0.25 + FRAC_PI_2]);
    }

    #[test]
    fn running_sum() {
        let src = format!(
            r#"[{{"virtual_z":"Q1","phase":{p}}},{{"gate":"X90","qubit":"Q1"}},
                {{"virtual_z":"Q1","phase":{p}}},{{"gate":"X90","qubit":"Q1"}}]"#,
            p = FRAC_PI_3
        );
        let out = apply_virtual_z(resolve(&src).unwrap()).unwrap();
        let mut acc = 0.0;
        let oracle: Vec<f64> = [FRAC_PI_3, FRAC_PI_3]
            .iter()
            .map(|d| {
                acc += d;
                acc
            })
            .collect();
        assert_eq!(drive_phases(&out), oracle);
    }

    #[test]
    fn readout_not_shifted_and_other_qubit_untouched() {
        let src = r#"[{"virtual_z":"Q0","phase":1.0},{"measure":"Q0","result":"m"},{"gate":"X90","qubit":"Q1"}]"#;
        let out = apply_virtual_z(resolve(src).unwrap()).unwrap();
        let IrNode::Measure(m) = &out.nodes[0] else { panic!() };
        assert_eq!(m.tone.phase, 0.0);
        assert_eq!(drive_phases(&out), vec![0.0]);
    }

    #[test]
    fn divergent_branch_frames_rejected() {
        let src = r#"[{"measure":"Q0","result":"m"},
            {"if":"m","then":[{"virtual_z":"Q0","phase":0.5}],"else":[]}]"#;
        assert!(apply_virtual_z(resolve(src).unwrap()).is_err());
        let src = r#"[{"measure":"Q0","result":"m"},
            {"if":"m","then":[{"virtual_z":"Q0","phase":0.5}],"else":[{"virtual_z":"Q0","phase":0.5}]},
            {"gate":"X90","qubit":"Q0"}]"#;
        let out = apply_virtual_z(resolve(src).unwrap()).unwrap();
        assert_eq!(drive_phases(&out), vec![0.75]);
    }
}
