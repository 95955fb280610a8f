// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

use qubitctl_core::assembler::{assemble, EnvelopeImage};
use qubitctl_core::compiler::{compile, CoreOp};
use qubitctl_core::demos;
use qubitctl_core::emulator::{read_delivery_script, write_events_csv, EmuError, Machine, RunStatus, ScriptedSource};
use qubitctl_core::runner::{Mode, RunConfig};

/// Cycle at which the leading sync releases every core's qclk.
const EPOCH: u64 = 5;

#[test]
fn open_loop_replay_matches_schedule() {
    let (cal, hw) = (demos::noiseless_calibration(), demos::hardware());
    let map = hw.resolve().unwrap();
    let prog = compile(demos::COND_BIT_FLIP, &cal, &hw).unwrap();
    let asm = assemble(&prog, &map).unwrap();
    let d = map.dispatch_offset;

    // Deliver m0 = 1 where the closed loop would: window end plus fproc latency.
    let window = prog.cores[0]
        .pulses()
        .into_iter()
        .find(|p| p.channel == "Q0.rdlo")
        .cloned()
        .unwrap();
    let ch = map.channel("Q0.rdlo").unwrap();
    let due = EPOCH + d + window.time + ch.ticks(window.length) + cal.fproc_latency;
    let script = format!("cycle,fproc_id,value\n{due},0,1\n");
    let mut src = ScriptedSource::new(read_delivery_script(script.as_bytes()).unwrap());
    let mut m = Machine::new(&asm.program).unwrap();
    let out = m.run(&mut src, 1_000_000).unwrap();
    assert_eq!(out.status, RunStatus::Completed);

    // Every scheduled pulse outside untaken arms fires at its scheduled time.
    let mut expected: Vec<(u64, u16, i64)> = Vec::new();
    for core in &prog.cores {
        for op in &core.ops {
            match op {
                CoreOp::Pulse(p) => expected.push((EPOCH + d + p.time, p.channel_id, (p.time + d) as i64)),
                CoreOp::Branch { then_ops, .. } => {
                    for op in then_ops {
                        if let CoreOp::Pulse(p) = op {
                            expected.push((EPOCH + d + p.time, p.channel_id, (p.time + d) as i64));
                        }
                    }
                }
                _ => {}
            }
        }
    }
    expected.sort();
    let mut got: Vec<_> = out.events.iter().map(|e| (e.cycle, e.channel, e.qclk)).collect();
    got.sort();
    assert_eq!(got, expected);

    let mut csv = Vec::new();
    write_events_csv(&mut csv, &out.events).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    assert_eq!(csv.lines().count(), out.events.len() + 1);
}

#[test]
fn missing_delivery_deadlocks() {
    let (cal, hw) = (demos::noiseless_calibration(), demos::hardware());
    let asm = assemble(&compile(demos::FAST_RESET, &cal, &hw).unwrap(), &hw.resolve().unwrap()).unwrap();
    let mut m = Machine::new(&asm.program).unwrap();
    let err = m.run(&mut ScriptedSource::new(Vec::new()), 1_000_000).unwrap_err();
    match err {
        EmuError::Deadlock { blocked, .. } => assert!(!blocked.is_empty()),
        e => panic!("expected a deadlock, got {e}"),
    }
}

#[test]
fn compile_is_deterministic_and_images_roundtrip() {
    let (cal, hw) = (demos::calibration(), demos::hardware());
    let map = hw.resolve().unwrap();
    for (name, c) in demos::CIRCUITS {
        let a = assemble(&compile(c, &cal, &hw).unwrap(), &map).unwrap();
        let b = assemble(&compile(c, &cal, &hw).unwrap(), &map).unwrap();
        assert_eq!(a.binary().unwrap(), b.binary().unwrap(), "{name}");
        assert_eq!(a.manifest.to_json(), b.manifest.to_json(), "{name}");
        for img in &a.images {
            let bytes = img.to_bytes();
            assert_eq!(&bytes[..4], b"QEV1");
            let back = EnvelopeImage::from_bytes(&img.channel, &bytes).unwrap();
            assert_eq!(back.entries, img.entries);
        }
    }
}

#[test]
fn noisy_demo_still_correlates() {
    let (_, r) = demos::build(demos::COND_BIT_FLIP, &demos::calibration(), &demos::hardware()).unwrap();
    for mode in [Mode::IdealIq, Mode::Waveform] {
        let rep = r.run(&RunConfig { shots: 400, seed: 3, mode, ..Default::default() }).unwrap();
        let agree = rep.probability("00") + rep.probability("11");
        assert!(agree > 0.99, "{mode}: {:?}", rep.counts);
    }
}

#[test]
fn active_reset_returns_to_ground() {
    let (_, r) = demos::build(demos::ACTIVE_RESET, &demos::noiseless_calibration(), &demos::hardware()).unwrap();
    let rep = r.run(&RunConfig { shots: 500, seed: 4, ..Default::default() }).unwrap();
    assert_eq!(rep.counts.get("00"), Some(&500));
    assert!(rep.timing.min_cycles > 0 && rep.timing.min_cycles <= rep.timing.max_cycles);
}
