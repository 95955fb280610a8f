// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn demos() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/demos")
}

fn qubitctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qubitctl")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn compile(circuit: &str, out: &Path) -> Output {
    let d = demos();
    qubitctl(&[
        "compile",
        s(&d.join(circuit)),
        "--cal",
        s(&d.join("calibration.json")),
        "--hw",
        s(&d.join("hardware.json")),
        "--out",
        s(out),
    ])
}

fn run(binary: &Path, extra: &[&str]) -> Output {
    let d = demos();
    let (cal, hw) = (d.join("calibration.json"), d.join("hardware.json"));
    let mut args = vec!["run", s(binary), "--cal", s(&cal), "--hw", s(&hw)];
    args.extend_from_slice(extra);
    qubitctl(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn compile_is_clean_and_repeatable() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    let o = compile("fast_reset.json", &a);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).is_empty());
    assert_eq!(compile("fast_reset.json", &b).status.code(), Some(0));
    let (ta, tb) = (tree(&a), tree(&b));
    let names: Vec<_> = ta.iter().map(|(n, _)| n.as_str()).collect();
    for f in ["program.qbc", "manifest.json", "schedule.txt", "pulses.json", "Q0.drive.qev", "Q0.rdrv.qev"] {
        assert!(names.contains(&f), "{f} missing from {names:?}");
    }
    assert_eq!(ta, tb);
    let qev = &ta.iter().find(|(n, _)| n == "Q0.drive.qev").unwrap().1;
    assert_eq!(&qev[..4], b"QEV1");
}

#[test]
fn missing_calibration_names_path() {
    let t = tempfile::tempdir().unwrap();
    let d = demos();
    let missing = t.path().join("nowhere.json");
    let o = qubitctl(&[
        "compile",
        s(&d.join("fast_reset.json")),
        "--cal",
        s(&missing),
        "--hw",
        s(&d.join("hardware.json")),
        "--out",
        s(t.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(s(&missing)), "{}", stderr(&o));
}

#[test]
fn circuit_errors_carry_line_and_column() {
    let t = tempfile::tempdir().unwrap();
    let src = t.path().join("bad.json");
    fs::write(&src, "[\n  {\"gate\": \"X90\", \"qubit\": \"Q0\"},\n  {\"gate\": \"X91\", \"qubit\": \"Q0\"}\n]\n").unwrap();
    let d = demos();
    let o = qubitctl(&[
        "compile",
        s(&src),
        "--cal",
        s(&d.join("calibration.json")),
        "--hw",
        s(&d.join("hardware.json")),
        "--out",
        s(&t.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(&format!("{}:3:3: ", s(&src))), "{}", stderr(&o));
}

#[test]
fn conditional_bit_flip_histogram() {
    let t = tempfile::tempdir().unwrap();
    let bin = t.path().join("c/program.qbc");
    assert_eq!(compile("cond_bit_flip.json", &t.path().join("c")).status.code(), Some(0));
    let res = t.path().join("r");
    let o = run(&bin, &["--shots", "400", "--seed", "7", "--out", s(&res), "--gnuplot", "--waveform", "Q1.drive"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let counts = fs::read_to_string(res.join("counts.csv")).unwrap();
    let mut total = 0;
    for line in counts.lines().skip(1) {
        let (k, n) = line.split_once(',').unwrap();
        assert!(k == "00" || k == "11", "{counts}");
        total += n.parse::<u64>().unwrap();
    }
    assert_eq!(total, 400);
    let report: String = fs::read_to_string(res.join("report.json")).unwrap();
    assert!(report.contains("\"shots\": 400"));
    assert!(fs::read_to_string(res.join("counts.gp")).unwrap().contains("counts.csv"));
    assert!(fs::read_to_string(res.join("events.csv"))
        .unwrap()
        .starts_with("cycle,channel,freq_word,phase_word,amp_word,length,env_addr\n"));
    assert!(fs::read_to_string(res.join("wave_Q1.drive.csv")).unwrap().starts_with("n,i,q\n"));
}

#[test]
fn seeded_single_shot_repeats() {
    let t = tempfile::tempdir().unwrap();
    let bin = t.path().join("c/program.qbc");
    compile("fast_reset.json", &t.path().join("c"));
    let args = ["--shots", "1", "--seed", "99", "--records", "--mode", "waveform"];
    let (a, b) = (run(&bin, &args), run(&bin, &args));
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).contains("\"records\""));
}

#[test]
fn runtime_failures_exit_one() {
    let t = tempfile::tempdir().unwrap();
    let dir = t.path().join("c");
    compile("fast_reset.json", &dir);
    let listing = t.path().join("l.txt");
    for (text, needle) in [
        ("core 0\n     0: brfproc 9 #1 @1\n     1: halt\n", "deadlock"),
        ("core 0\n     0: pulse t=0 ch=0 freq=0x000001 phase=0x0000 amp=0x001 len=1 env=0x000\n     1: halt\n", "late"),
    ] {
        fs::write(&listing, text).unwrap();
        let o = qubitctl(&["asm", s(&listing), "--out", s(&dir)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let o = run(&dir.join("program.qbc"), &["--shots", "2"]);
        assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
        assert!(stderr(&o).to_lowercase().contains(needle), "{}", stderr(&o));
        assert!(stderr(&o).contains("core 0"), "{}", stderr(&o));
    }
}

#[test]
fn listing_roundtrip_through_files() {
    let t = tempfile::tempdir().unwrap();
    let dir = t.path().join("c");
    compile("active_reset.json", &dir);
    let text = t.path().join("prog.txt");
    assert_eq!(qubitctl(&["disasm", s(&dir.join("program.qbc")), "--out", s(&text)]).status.code(), Some(0));
    let re = t.path().join("re");
    let o = qubitctl(&["asm", s(&text), "--out", s(&re), "--dump-listing"]);
    assert_eq!(stdout(&o), fs::read_to_string(&text).unwrap());
    assert_eq!(fs::read(re.join("program.qbc")).unwrap(), fs::read(dir.join("program.qbc")).unwrap());
    let re2 = t.path().join("re2");
    let o = qubitctl(&["asm", s(&dir.join("pulses.json")), "--hw", s(&demos().join("hardware.json")), "--out", s(&re2)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(tree(&re2), tree(&dir).into_iter().filter(|(n, _)| n != "schedule.txt" && n != "pulses.json").collect::<Vec<_>>());
}

#[test]
fn ptp_reports() {
    let o = qubitctl(&["ptp", "--trials", "50", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.starts_with("trial,true_offset,estimated_offset,residual\n"));
    assert_eq!(out.lines().count(), 52);
    assert!(out.ends_with("# max |residual| = 0\n"));
    let out = stdout(&qubitctl(&["ptp", "--trials", "20", "--asymmetry", "14"]));
    assert!(out.lines().skip(1).take(20).all(|l| l.ends_with(",7")), "{out}");
    assert_eq!(qubitctl(&["ptp", "--trials", "0"]).status.code(), Some(2));
    assert_eq!(qubitctl(&["ptp", "--delay", "9:3"]).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(qubitctl(&["run"]).status.code(), Some(2));
    let t = tempfile::tempdir().unwrap();
    let bin = t.path().join("c/program.qbc");
    compile("fast_reset.json", &t.path().join("c"));
    assert_eq!(run(&bin, &["--mode", "analog"]).status.code(), Some(2));
    assert_eq!(run(&bin, &["--shots", "0"]).status.code(), Some(2));
}

#[test]
fn open_loop_replay_emits_event_log() {
    let t = tempfile::tempdir().unwrap();
    let dir = t.path().join("c");
    compile("cond_bit_flip.json", &dir);
    let script = t.path().join("d.csv");
    let bin = dir.join("program.qbc");
    fs::write(&script, "cycle,fproc_id,value\n100,0,1\n").unwrap();
    let (a, b) = (run(&bin, &["--deliveries", s(&script)]), run(&bin, &["--deliveries", s(&script)]));
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    let taken = stdout(&a);
    assert!(taken.starts_with("cycle,channel,freq_word,phase_word,amp_word,length,env_addr\n"));
    fs::write(&script, "cycle,fproc_id,value\n100,0,0\n").unwrap();
    let skipped = stdout(&run(&bin, &["--deliveries", s(&script)]));
    assert_eq!(taken.lines().count(), skipped.lines().count() + 2, "{taken}\n{skipped}");
    fs::write(&script, "cycle,fproc_id,value\n").unwrap();
    let o = run(&bin, &["--deliveries", s(&script)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).to_lowercase().contains("deadlock"), "{}", stderr(&o));
}
