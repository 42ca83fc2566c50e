use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use homlab::experiment::{run, ExperimentConfig, ExperimentKind, ExperimentResult};
use homlab::Error;

#[derive(Parser)]
#[command(
    name = "homlab",
    version,
    about = "Numerical experiments in quantitative stochastic homogenization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `outputs` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Sample coefficient fields on the torus.
    Field,
    /// Correctors and effective tensors per sample.
    Correctors,
    /// Strong and two-scale errors across the epsilon sweep.
    Homogenize,
    /// Minimal-radius fields and moments.
    Minrad,
    /// Calderón-Zygmund functionals across the sweep.
    Cz,
    /// Commutator fluctuations across the sweep.
    Fluctuation,
    /// Every stage of the configuration.
    All,
    /// Print the summary of a finished run.
    Report,
}

impl Command {
    fn kind(self) -> Option<ExperimentKind> {
        Some(match self {
            Command::Field => ExperimentKind::Field,
            Command::Correctors => ExperimentKind::Correctors,
            Command::Homogenize => ExperimentKind::Homogenize,
            Command::Minrad => ExperimentKind::Minrad,
            Command::Cz => ExperimentKind::Cz,
            Command::Fluctuation => ExperimentKind::Fluctuation,
            Command::All => ExperimentKind::All,
            Command::Report => return None,
        })
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) => 2,
        Error::SolverFailure { .. } => 3,
        _ => 1,
    }
}

fn execute(cli: &Cli) -> homlab::Result<()> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    let Some(kind) = cli.command.kind() else {
        let dir = match (&cli.out, &cli.config) {
            (Some(dir), _) => dir.clone(),
            (None, Some(path)) => ExperimentConfig::from_path(path)?.outputs,
            (None, None) => return Err(Error::Config("report needs --out or --config".into())),
        };
        print!("{}", ExperimentResult::load(&dir)?.summary_text());
        return Ok(());
    };
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut config = ExperimentConfig::from_path(path)?;
    config.experiment = kind;
    if let Some(out) = &cli.out {
        config.outputs = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.ensemble.master_seed = seed;
    }
    let result = run(&config)?;
    print!("{}", result.summary_text());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("homlab: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
