// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! `qubitctl`: compile circuits, assemble and disassemble core programs, run
//! shot batches against the qubit model, and simulate clock synchronization.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use qubitctl_core::assembler::{assemble, disassemble, listing, parse_listing, Assembly, EnvelopeImage, Manifest};
use qubitctl_core::compiler::{compile, CalibrationSet, ChannelMap, CompileError, HardwareConfig, PulseProgram};
use qubitctl_core::dsp::write_waveform_csv;
use qubitctl_core::emulator::{read_delivery_script, write_events_csv, Machine, RunStatus, ScriptedSource};
use qubitctl_core::isa::ProgramFile;
use qubitctl_core::ptp::{run_trials, TickRange, TrialConfig};
use qubitctl_core::runner::{Mode, RunConfig, RunError, Runner, DEFAULT_MAX_CYCLES};

const PROGRAM_FILE: &str = "program.qbc";
const MANIFEST_FILE: &str = "manifest.json";
const SCHEDULE_FILE: &str = "schedule.txt";
const PULSES_FILE: &str = "pulses.json";

#[derive(Parser)]
#[command(name = "qubitctl", version, about = "Distributed qubit-control toolchain and emulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a circuit to a core program, envelope images and a schedule listing.
    Compile(CompileArgs),
    /// Assemble a pulse program (JSON) or a text listing.
    Asm(AsmArgs),
    /// Print the listing of a program binary.
    Disasm(DisasmArgs),
    /// Run shots of a compiled program against the qubit model.
    Run(RunArgs),
    /// Simulate offset estimation over randomized two-way exchanges.
    Ptp(PtpArgs),
}

#[derive(Args)]
struct Documents {
    /// Calibration document (JSON).
    #[arg(long = "cal", value_name = "PATH")]
    calibration: PathBuf,
    /// Hardware mapping document (JSON).
    #[arg(long = "hw", value_name = "PATH")]
    hardware: PathBuf,
}

#[derive(Args)]
struct CompileArgs {
    circuit: PathBuf,
    #[command(flatten)]
    docs: Documents,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Print the program listing to stdout.
    #[arg(long)]
    dump_listing: bool,
}

#[derive(Args)]
struct AsmArgs {
    /// `pulses.json` from `compile`, or a text listing.
    input: PathBuf,
    /// Hardware mapping, needed for pulse programs.
    #[arg(long = "hw", value_name = "PATH")]
    hardware: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    dump_listing: bool,
}

#[derive(Args)]
struct DisasmArgs {
    binary: PathBuf,
    /// Write the listing here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// `program.qbc`, next to its `manifest.json` and envelope images.
    binary: PathBuf,
    #[command(flatten)]
    docs: Documents,
    #[arg(long, default_value_t = 1000)]
    shots: u64,
    /// Defaults to the calibration seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "ideal-iq")]
    mode: Mode,
    /// Directory for report.json, counts.csv, events.csv and waveform dumps.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a gnuplot script for the histogram.
    #[arg(long)]
    gnuplot: bool,
    /// Include per-shot records in the report.
    #[arg(long)]
    records: bool,
    /// Dump the synthesized output of these channels for the first shot.
    #[arg(long = "waveform", value_name = "CHANNEL")]
    waveforms: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_MAX_CYCLES)]
    max_cycles: u64,
    /// Replay this `cycle,fproc_id,value` script open loop instead of running
    /// the qubit model, and emit the event log.
    #[arg(long, value_name = "CSV")]
    deliveries: Option<PathBuf>,
}

#[derive(Args)]
struct PtpArgs {
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// True offset range in ticks, `LO:HI` or a single value.
    #[arg(long, default_value = "-1000:1000", value_parser = parse_range)]
    offset: TickRange,
    /// One-way path delay range.
    #[arg(long, default_value = "10:500", value_parser = parse_range)]
    delay: TickRange,
    /// Extra primary-to-secondary delay.
    #[arg(long, default_value = "0", value_parser = parse_range)]
    asymmetry: TickRange,
    /// Secondary turnaround time.
    #[arg(long, default_value = "0:100", value_parser = parse_range)]
    processing: TickRange,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<TickRange, String> {
    let num = |t: &str| t.trim().parse::<i64>().map_err(|e| format!("{t:?}: {e}"));
    if s.is_empty() {
        return Err("empty range".into());
    }
    // A leading '-' belongs to the first bound.
    match s[1..].find(':').map(|k| k + 1) {
        Some(k) => Ok(TickRange { lo: num(&s[..k])?, hi: num(&s[k + 1..])? }),
        None => num(s).map(TickRange::fixed),
    }
}

/// Runtime failures exit with 1, everything else with 2.
enum Failure {
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

type Outcome = Result<(), Failure>;

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_docs(d: &Documents) -> anyhow::Result<(CalibrationSet, HardwareConfig, ChannelMap)> {
    let cal = CalibrationSet::from_json(&read_text(&d.calibration)?).with_context(|| d.calibration.display().to_string())?;
    let hw = HardwareConfig::from_json(&read_text(&d.hardware)?).with_context(|| d.hardware.display().to_string())?;
    let map = hw.resolve().with_context(|| d.hardware.display().to_string())?;
    cal.validate(&map).with_context(|| d.calibration.display().to_string())?;
    Ok((cal, hw, map))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn write_assembly(asm: &Assembly, out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write(&out.join(PROGRAM_FILE), asm.binary()?)?;
    for img in &asm.images {
        write(&out.join(format!("{}.qev", img.channel)), img.to_bytes())?;
    }
    write(&out.join(MANIFEST_FILE), asm.manifest.to_json())
}

fn cmd_compile(a: &CompileArgs) -> Outcome {
    let (cal, hw, map) = load_docs(&a.docs)?;
    let src = read_text(&a.circuit)?;
    let path = a.circuit.display();
    let prog = compile(&src, &cal, &hw).map_err(|e| match e {
        CompileError::Parse(d) => anyhow!(d.iter().map(|d| format!("{path}:{d}")).collect::<Vec<_>>().join("\n")),
        CompileError::Resolve { .. } => anyhow!("{path}:{e}"),
        e => anyhow!("{path}: {e}"),
    })?;
    let asm = assemble(&prog, &map).map_err(|e| anyhow!("{path}: {e}"))?;
    write_assembly(&asm, &a.out)?;
    write(&a.out.join(SCHEDULE_FILE), prog.listing())?;
    write(&a.out.join(PULSES_FILE), prog.to_json())?;
    if a.dump_listing {
        print!("{}", listing(&asm.program));
    }
    Ok(())
}

fn cmd_asm(a: &AsmArgs) -> Outcome {
    let text = read_text(&a.input)?;
    if text.trim_start().starts_with('{') {
        let hw_path = a.hardware.as_ref().context("assembling a pulse program needs --hw")?;
        let map = HardwareConfig::from_json(&read_text(hw_path)?)
            .and_then(|hw| hw.resolve())
            .with_context(|| hw_path.display().to_string())?;
        let prog = PulseProgram::from_json(&text).with_context(|| a.input.display().to_string())?;
        let asm = assemble(&prog, &map).with_context(|| a.input.display().to_string())?;
        write_assembly(&asm, &a.out)?;
        if a.dump_listing {
            print!("{}", listing(&asm.program));
        }
    } else {
        let prog = parse_listing(&text).map_err(|e| anyhow!("{}:{e}", a.input.display()))?;
        fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
        write(&a.out.join(PROGRAM_FILE), prog.to_bytes().map_err(|e| anyhow!(e))?)?;
        if a.dump_listing {
            print!("{}", listing(&prog));
        }
    }
    Ok(())
}

fn cmd_disasm(a: &DisasmArgs) -> Outcome {
    let bytes = fs::read(&a.binary).with_context(|| format!("cannot read {}", a.binary.display()))?;
    let text = disassemble(&bytes).with_context(|| a.binary.display().to_string())?;
    match &a.out {
        Some(p) => write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn runtime(e: RunError) -> Failure {
    match e {
        RunError::Emulator { .. } | RunError::Budget { .. } => Failure::Runtime(e.into()),
        _ => Failure::Input(e.into()),
    }
}

fn cmd_run(a: &RunArgs) -> Outcome {
    if a.shots == 0 {
        return Err(anyhow!("--shots must be at least 1").into());
    }
    let (cal, _, map) = load_docs(&a.docs)?;
    let bytes = fs::read(&a.binary).with_context(|| format!("cannot read {}", a.binary.display()))?;
    let program = ProgramFile::from_bytes(&bytes).map_err(|e| anyhow!("{}: {e}", a.binary.display()))?;
    if let Some(script) = &a.deliveries {
        return replay(&program, script, a);
    }
    let dir = a.binary.parent().unwrap_or(Path::new("."));
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = Manifest::from_json(&read_text(&manifest_path)?).with_context(|| manifest_path.display().to_string())?;
    let mut images = Vec::new();
    for channel in manifest.envelopes.keys() {
        let p = dir.join(format!("{channel}.qev"));
        let data = fs::read(&p).with_context(|| format!("cannot read {}", p.display()))?;
        images.push(EnvelopeImage::from_bytes(channel, &data).with_context(|| p.display().to_string())?);
    }
    let mut runner = Runner::new(&program, &images, manifest.results, &cal, map).map_err(runtime)?;
    let cfg = RunConfig {
        shots: a.shots,
        seed: a.seed.unwrap_or(cal.seed),
        mode: a.mode,
        records: a.records,
        max_cycles: a.max_cycles,
    };
    let report = runner.run(&cfg).map_err(runtime)?;
    let Some(out) = &a.out else {
        println!("{}", report.to_json());
        return Ok(());
    };
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write(&out.join("report.json"), report.to_json() + "\n")?;
    let mut csv = Vec::new();
    report.write_counts_csv(&mut csv).context("counts")?;
    write(&out.join("counts.csv"), csv)?;
    if a.gnuplot {
        write(&out.join("counts.gp"), report.gnuplot_script("counts.csv"))?;
    }
    let first = runner.run_shot(0, cfg.seed, cfg.mode, cfg.max_cycles).map_err(runtime)?;
    let mut events = Vec::new();
    write_events_csv(&mut events, &first.events).context("events")?;
    write(&out.join("events.csv"), events)?;
    for name in &a.waveforms {
        let id = runner.map().channel(name).with_context(|| format!("unknown channel {name}"))?.id;
        let wave = runner.render_channel(&first.events, id).map_err(runtime)?;
        let mut buf = Vec::new();
        write_waveform_csv(&mut buf, &wave, 0).context("waveform")?;
        write(&out.join(format!("wave_{name}.csv")), buf)?;
    }
    for (adc, samples) in &first.adc {
        let mut buf = Vec::new();
        let as_iq: Vec<_> = samples.iter().map(|&v| num_complex::Complex64::new(v, 0.0)).collect();
        write_waveform_csv(&mut buf, &as_iq, 0).context("adc")?;
        write(&out.join(format!("adc{adc}.csv")), buf)?;
    }
    let mut stdout = io::stdout().lock();
    for (k, n) in &report.counts {
        writeln!(stdout, "{k} {n}").ok();
    }
    Ok(())
}

fn replay(program: &ProgramFile, script: &Path, a: &RunArgs) -> Outcome {
    let deliveries = read_delivery_script(read_text(script)?.as_bytes()).with_context(|| script.display().to_string())?;
    let mut machine = Machine::new(program).map_err(|e| anyhow!("{}: {e}", a.binary.display()))?;
    let run = machine
        .run(&mut ScriptedSource::new(deliveries), a.max_cycles)
        .map_err(|e| Failure::Runtime(e.into()))?;
    let mut events = Vec::new();
    write_events_csv(&mut events, &run.events).context("events")?;
    match &a.out {
        Some(out) => {
            fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
            write(&out.join("events.csv"), events)?;
        }
        None => io::stdout().lock().write_all(&events).context("stdout")?,
    }
    if run.status == RunStatus::BudgetExhausted {
        return Err(Failure::Runtime(anyhow!("cycle budget of {} exhausted", a.max_cycles)));
    }
    Ok(())
}

fn cmd_ptp(a: &PtpArgs) -> Outcome {
    let cfg = TrialConfig {
        trials: a.trials,
        offset: a.offset,
        delay: a.delay,
        asymmetry: a.asymmetry,
        processing: a.processing,
        seed: a.seed,
    };
    let trials = run_trials(&cfg).map_err(|e| anyhow!(e))?;
    let mut text = String::from("trial,true_offset,estimated_offset,residual\n");
    for t in &trials {
        text.push_str(&format!("{},{},{},{}\n", t.trial, t.true_offset, t.estimated_offset, t.residual));
    }
    let max = trials.iter().map(|t| t.residual.unsigned_abs()).max().unwrap_or(0);
    text.push_str(&format!("# max |residual| = {max}\n"));
    match &a.out {
        Some(p) => write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Compile(a) => cmd_compile(a),
        Command::Asm(a) => cmd_asm(a),
        Command::Disasm(a) => cmd_disasm(a),
        Command::Run(a) => cmd_run(a),
        Command::Ptp(a) => cmd_ptp(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
