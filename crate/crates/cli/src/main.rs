use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use tlsdetect::io::SCHEMAS;

mod config;
mod manifest;
mod pipeline;
mod plot;

use config::{invalid, LoadedConfig};
use pipeline::{CorrelateInputs, Run};

/// Detect two-level-system defects in flux-tunable resonator sweeps and
/// estimate their density.
#[derive(Parser)]
#[command(name = "tlsdetect", version)]
struct Cli {
    /// Print the column layout of an input or output file and exit.
    /// Without a name, list every known file.
    #[arg(long, value_name = "NAME", num_args = 0..=1, default_missing_value = "")]
    schema: Option<String>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(clap::Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Root seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads across resonators.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Store wall-clock times in the manifest (makes it run-dependent).
    #[arg(long)]
    record_timings: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic traces from the configured scenarios.
    Simulate(Common),
    /// Fit traces, calibrate the detector and locate defects.
    Detect(Common),
    /// Posterior defect count and density for each resonator.
    Infer {
        #[command(flatten)]
        common: Common,
        /// A single inference file instead of the pipeline's detect output.
        #[arg(long, conflicts_with = "config")]
        input: Option<PathBuf>,
    },
    /// Treatment comparison and microstructure correlation.
    Correlate {
        #[command(flatten)]
        common: Common,
        /// Density table; defaults to the pipeline's infer output.
        #[arg(long)]
        densities: Option<PathBuf>,
        /// Morphology table; defaults to the config entry.
        #[arg(long)]
        morphology: Option<PathBuf>,
    },
    /// Markdown summary of the finished stages.
    Report(Common),
    /// Every stage in order.
    Run(Common),
}

fn run_for(c: &Common) -> Result<Run> {
    let loaded = c.config.as_deref().map(LoadedConfig::load).transpose()?;
    Run::new(c.out.clone(), loaded, c.seed, c.jobs, c.record_timings)
}

fn print_schema(name: &str) -> Result<()> {
    if name.is_empty() {
        for s in SCHEMAS {
            println!("{:<12} {:<5} {}", s.name, s.kind, s.description);
        }
        return Ok(());
    }
    let Some(s) = SCHEMAS.iter().find(|s| s.name == name) else {
        let names: Vec<&str> = SCHEMAS.iter().map(|s| s.name).collect();
        bail!(invalid(format!("unknown schema `{name}`; known: {}", names.join(", "))));
    };
    println!("{} ({}): {}", s.name, s.kind, s.description);
    for c in s.columns {
        println!("  {c}");
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(name) = &cli.schema {
        return print_schema(name);
    }
    let Some(command) = cli.command else {
        bail!(invalid("no command given; see --help"));
    };
    match command {
        Command::Simulate(c) => pipeline::simulate(&run_for(&c)?),
        Command::Detect(c) => pipeline::detect_stage(&run_for(&c)?),
        Command::Infer { common, input } => {
            let run = run_for(&common)?;
            match input {
                Some(path) => pipeline::infer_file(&run, &path),
                None => pipeline::infer_stage(&run),
            }
        }
        Command::Correlate { common, densities, morphology } => {
            let run = run_for(&common)?;
            match densities {
                Some(densities) => {
                    let morphology = morphology.or_else(|| {
                        run.config.as_ref().and_then(|c| c.config.correlate.morphology.as_ref().map(|m| c.resolve(m)))
                    });
                    pipeline::correlate(&run, &CorrelateInputs { densities, morphology })
                }
                None if morphology.is_some() => bail!(invalid("--morphology needs --densities")),
                None => pipeline::correlate_stage(&run),
            }
        }
        Command::Report(c) => pipeline::report(&run_for(&c)?),
        Command::Run(c) => {
            let run = run_for(&c)?;
            let loaded = run.config.as_ref().ok_or_else(|| invalid("`run` needs --config"))?;
            if loaded.scenarios.iter().any(Option::is_some) {
                pipeline::simulate(&run)?;
            }
            // A failed resonator does not stop the later stages.
            let detected = pipeline::detect_stage(&run);
            let inferred = pipeline::infer_stage(&run);
            let correlated = pipeline::correlate_stage(&run);
            pipeline::report(&run)?;
            detected.and(inferred).and(correlated)
        }
    }
}

/// 1 for bad input or configuration, 2 for numerical failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<tlsdetect::Error>() {
            return if e.is_numerical() { 2 } else { 1 };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
