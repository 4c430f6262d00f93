use std::path::PathBuf;
use std::process::ExitCode;

use chlab::harness::{self, Command, ExperimentConfig};
use clap::{Parser, Subcommand};

/// Camassa–Holm experiments: deterministic and stochastic PDE runs, peakons,
/// slope Monte Carlo and isospectral checks.
#[derive(Parser)]
#[command(name = "chlab", version)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Deterministic PDE run with diagnostics and slope tracking.
    SimulateCh(RunArgs),
    /// Stochastic PDE ensemble, one directory per path.
    SimulateSch(RunArgs),
    /// Peakon ODE (or SDE, with noise enabled) trajectories.
    Peakons(RunArgs),
    /// Breaking probability of the reduced slope SDE.
    SlopeMc(RunArgs),
    /// Eigenvalues, isospectral drift and emergent peak speeds.
    Spectrum(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON configuration, or a manifest.json from an earlier run. Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; must not exist or be empty.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root for generated output directories when --out is absent.
    #[arg(long, env = "CHLAB_OUT", default_value = "runs")]
    out_root: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides mc.n_paths.
    #[arg(long)]
    paths: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.verb {
        Verb::SimulateCh(a) => (Command::SimulateCh, a),
        Verb::SimulateSch(a) => (Command::SimulateSch, a),
        Verb::Peakons(a) => (Command::Peakons, a),
        Verb::SlopeMc(a) => (Command::SlopeMc, a),
        Verb::Spectrum(a) => (Command::Spectrum, a),
    };
    match execute(command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("chlab: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command, args: RunArgs) -> Result<(), harness::HarnessError> {
    let mut config = match &args.config {
        Some(path) => {
            let (config, recorded) = ExperimentConfig::load(path)?;
            if let Some(recorded) = recorded.filter(|r| *r != command) {
                eprintln!("chlab: note: manifest was written by `{}`", recorded.name());
            }
            config
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(paths) = args.paths {
        config.mc.n_paths = paths;
    }
    let out = args.out.unwrap_or_else(|| args.out_root.join(harness::default_run_name(command, &config)));
    let manifest = harness::run(command, &config, &out)?;
    println!("{}", out.display());
    println!("content_hash {}", manifest.content_hash);
    println!("wall_time_s {:.3}", manifest.wall_time_s);
    Ok(())
}
