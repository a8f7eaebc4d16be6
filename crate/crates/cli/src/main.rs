//! `wbp`: run branching-process experiments from a TOML configuration.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error,
//! 3 particle cap exceeded, 4 inconclusive verdict under `--strict`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use wbp_core::harness::{run_experiment, with_threads, ExperimentConfig, Pipeline};
use wbp_core::martingale::Verdict;
use wbp_core::Error;

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CAP: u8 = 3;
const EXIT_INCONCLUSIVE: u8 = 4;

#[derive(Parser)]
#[command(name = "wbp", version, about = "Weighted branching process simulation and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo means of G_n(f) against the many-to-one prediction.
    Simulate(Common),
    /// Perron root, eigenvectors, polynomial exponent and alpha_n of the mean kernel.
    Spectral(Common),
    /// Marcinkiewicz-Zygmund certificate and the bound at the checkpoints.
    Certify(Common),
    /// Certified bound against the Monte Carlo L^p error.
    #[command(name = "verify-theorem1")]
    VerifyTheorem1(Common),
    /// Moment and dispersion conditions for a non-degenerate limit.
    Llogl(Common),
    /// Cascade martingale, increments and degeneracy.
    Cascade(Common),
    /// Products of random kernels along the tree.
    KernelProducts(Common),
    /// Contraction-rate probe for random affine dynamics on [0,1].
    Ifs(Common),
    /// Lineage (Birkhoff-type) averages.
    Lineage(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Root seed (overrides the configuration).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of replicates (overrides the configuration).
    #[arg(long)]
    replicates: Option<usize>,
    /// Output directory for result.json and series_*.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Exit with status 4 when the overall verdict is inconclusive.
    #[arg(long)]
    strict: bool,
}

impl Command {
    fn split(self) -> (Pipeline, Common) {
        match self {
            Command::Simulate(c) => (Pipeline::Simulate, c),
            Command::Spectral(c) => (Pipeline::Spectral, c),
            Command::Certify(c) => (Pipeline::Certify, c),
            Command::VerifyTheorem1(c) => (Pipeline::VerifyTheorem1, c),
            Command::Llogl(c) => (Pipeline::Llogl, c),
            Command::Cascade(c) => (Pipeline::Cascade, c),
            Command::KernelProducts(c) => (Pipeline::KernelProducts, c),
            Command::Ifs(c) => (Pipeline::Ifs, c),
            Command::Lineage(c) => (Pipeline::Lineage, c),
        }
    }
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::TooFewReplicates { .. } | Error::InvalidArgument(_) | Error::Dimension { .. }) => {
            EXIT_CONFIG
        }
        Some(Error::PopulationCap { .. }) => EXIT_CAP,
        _ => EXIT_RUNTIME,
    }
}

fn execute(pipeline: Pipeline, args: Common) -> anyhow::Result<u8> {
    let mut config = ExperimentConfig::load(&args.config)?;
    config.pipeline = Some(pipeline);
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(r) = args.replicates {
        config.replicates = r;
    }
    // the output location is not part of the experiment, so it is kept out of the echoed config
    let out = args.out.or(config.output.take()).unwrap_or_else(|| PathBuf::from("wbp-out"));
    config.validate()?;

    let started = Instant::now();
    let result = with_threads(args.threads, || run_experiment(&config))??;
    let written = result
        .write_to(&out)
        .with_context(|| format!("writing results to {}", out.display()))?;

    eprintln!(
        "{}: verdict {:?}, {} checks, {} particles, {:.2}s",
        pipeline.name(),
        result.verdict,
        result.checks.len(),
        result.telemetry.total_particles,
        started.elapsed().as_secs_f64()
    );
    for c in result.checks.iter().filter(|c| c.verdict != Verdict::Holds) {
        eprintln!("  {:?} {} = {} {}", c.verdict, c.name, c.value, c.detail);
    }
    for p in &written {
        println!("{}", p.display());
    }

    if result.telemetry.capped_replicates > 0 {
        eprintln!("{} replicate(s) exceeded the particle cap", result.telemetry.capped_replicates);
        return Ok(EXIT_CAP);
    }
    if args.strict && result.verdict == Verdict::Inconclusive {
        return Ok(EXIT_INCONCLUSIVE);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (pipeline, args) = cli.command.split();
    match execute(pipeline, args) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
