use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wgdp_core::harness::{
    audit, run_suite, sweep, write_csv, write_outputs, AuditKind, Epsilon, ExperimentConfig, SuiteResult, SweepParam,
};
use wgdp_core::{Error, Result};

#[derive(Parser)]
#[command(name = "wgdp", version, about = "Private worst-group risk minimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Overrides shared by `run` and `sweep`.
#[derive(clap::Args)]
struct Overrides {
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path; stdout when neither this nor the config sets one.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Privacy parameter epsilon, a positive number or `inf`.
    #[arg(long)]
    eps: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Check an invariant suite and report margins.
    Audit {
        #[arg(long, value_parser = ["stability", "mechanisms", "regret", "reduction"])]
        kind: String,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a configuration once per value of one parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// K, eps, delta or rounds.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn load(path: &Path, overrides: &Overrides) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = overrides.seed {
        config.seeds = vec![seed];
    }
    if let Some(eps) = &overrides.eps {
        config.epsilon = Epsilon::parse(eps)?;
    }
    if let Some(out) = &overrides.out {
        config.output = Some(out.clone());
    }
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((config, base_dir))
}

fn emit(output: Option<&Path>, suites: &[SuiteResult]) -> Result<()> {
    match output {
        Some(path) => {
            write_outputs(path, suites)?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_csv(suites, &mut lock)?;
            lock.flush()?;
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, overrides } => {
            let (config, base_dir) = load(&config, &overrides)?;
            let suite = run_suite(&config, &base_dir)?;
            emit(config.output.as_deref(), &[suite])?;
            Ok(true)
        }
        Command::Sweep { config, param, values, overrides } => {
            let (config, base_dir) = load(&config, &overrides)?;
            let param: SweepParam = param.parse()?;
            let suites = sweep(&config, &base_dir, param, &values)?;
            emit(config.output.as_deref(), &suites)?;
            Ok(true)
        }
        Command::Audit { kind, trials, seed } => {
            let kind: AuditKind = kind.parse()?;
            let report = audit(kind, trials, seed)?;
            println!("{report}");
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ Error::Config(_)) => {
            eprintln!("wgdp: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("wgdp: {e}");
            ExitCode::from(3)
        }
    }
}
