//! `sketchmon`: runs the evaluation experiments and decodes dumped sketches.
//!
//! Sweeps are written as CSV, the shift timeline as JSON lines, the accuracy
//! report and decode results as JSON.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sketchmon_core::experiments::{
    run_accuracy_suite, run_loss_sweep, run_shift_scenario, run_threshold_sweep, summarize_shift, ExperimentConfig,
    ExperimentKind,
};
use sketchmon_core::{ControllerParams, FermatSketch, Flowset};

#[derive(Parser)]
#[command(name = "sketchmon", version, about = "Invertible sketch experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode success rate against buckets per flow.
    ThresholdSweep(RunArgs),
    /// Minimum loss-detection memory along one workload axis.
    LossSweep(RunArgs),
    /// Scripted workload changes replayed through the controller.
    ShiftScenario(RunArgs),
    /// Heavy-hitter, cardinality, entropy and loss accuracy on one trace.
    Accuracy(RunArgs),
    /// Decode a sketch written by `FermatSketch::to_bytes` or as JSON.
    Decode(DecodeArgs),
    /// Print the default configuration of an experiment as TOML.
    Config {
        #[arg(value_enum)]
        kind: KindArg,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum KindArg {
    ThresholdSweep,
    LossSweep,
    ShiftScenario,
    Accuracy,
}

impl From<KindArg> for ExperimentKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::ThresholdSweep => ExperimentKind::ThresholdSweep,
            KindArg::LossSweep => ExperimentKind::LossSweep,
            KindArg::ShiftScenario => ExperimentKind::ShiftScenario,
            KindArg::Accuracy => ExperimentKind::AccuracySuite,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with an experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Trials per sweep point or probe.
    #[arg(long)]
    trials: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    input: PathBuf,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Serialize)]
struct DecodeReport {
    status: String,
    flows: usize,
    pops: u64,
    residual_nonzero_buckets: usize,
    flowset: Flowset,
}

fn load_config(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::new(kind),
    };
    if cfg.kind != kind {
        bail!("configuration is for {:?}, not {:?}", cfg.kind, kind);
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.trials.is_some() {
        cfg.trials = args.trials;
    }
    if args.output.is_some() {
        cfg.output.clone_from(&args.output);
    }
    if let Some(t) = cfg.trials {
        cfg.threshold.trials = t;
        // keep the success quota at the same fraction of the trials
        cfg.loss.required = (cfg.loss.required * t).div_ceil(cfg.loss.trials).clamp(1, t.max(1));
        cfg.loss.trials = t;
    }
    Ok(cfg)
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_csv<T: Serialize>(rows: &[T], out: Box<dyn Write>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn run(kind: ExperimentKind, args: &RunArgs) -> Result<()> {
    let cfg = load_config(kind, args)?;
    let mut out = sink(cfg.output.as_deref())?;
    match kind {
        ExperimentKind::ThresholdSweep => write_csv(&run_threshold_sweep(&cfg.threshold, cfg.seed)?, out)?,
        ExperimentKind::LossSweep => write_csv(&run_loss_sweep(&cfg.loss, cfg.seed)?, out)?,
        ExperimentKind::ShiftScenario => {
            let rows = run_shift_scenario(&cfg.shift, cfg.seed)?;
            for r in &rows {
                serde_json::to_writer(&mut out, r)?;
                writeln!(out)?;
            }
            out.flush()?;
            let p = ControllerParams::default();
            let summary = summarize_shift(&rows, p.low_load, p.max_load);
            eprintln!("epochs to stabilize per phase: {:?}", summary.settle);
            eprintln!("stationary heavy-loss load outside band: {:?}", summary.band_violations);
        }
        ExperimentKind::AccuracySuite => {
            serde_json::to_writer_pretty(&mut out, &run_accuracy_suite(&cfg.accuracy, cfg.seed)?)?;
            writeln!(out)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn decode(args: &DecodeArgs) -> Result<()> {
    let bytes = fs::read(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let sketch = match FermatSketch::from_bytes(&bytes) {
        Ok(s) => s,
        Err(binary) => serde_json::from_slice::<FermatSketch>(&bytes)
            .with_context(|| format!("neither a binary dump ({binary}) nor JSON"))?,
    };
    let outcome = sketch.decode();
    let report = DecodeReport {
        status: format!("{:?}", outcome.status),
        flows: outcome.flowset.len(),
        pops: outcome.pops,
        residual_nonzero_buckets: outcome.residual_nonzero_buckets,
        flowset: outcome.flowset,
    };
    let mut out = sink(args.output.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::ThresholdSweep(a) => run(ExperimentKind::ThresholdSweep, &a),
        Command::LossSweep(a) => run(ExperimentKind::LossSweep, &a),
        Command::ShiftScenario(a) => run(ExperimentKind::ShiftScenario, &a),
        Command::Accuracy(a) => run(ExperimentKind::AccuracySuite, &a),
        Command::Decode(a) => decode(&a),
        Command::Config { kind } => {
            print!("{}", ExperimentConfig::new(kind.into()).to_toml()?);
            Ok(())
        }
    }
}
