use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dgreedy_cli::commands::{self, BaselineKind};
use dgreedy_cli::config::PsiConfig;

/// Distributed greedy selection over a mixing network.
///
/// Exit status: 0 when all enabled audits pass, 1 when an audit fails or the
/// protocol aborts, 2 for invalid input. Set DG_LOG (e.g. `DG_LOG=debug`)
/// for log output.
#[derive(Parser)]
#[command(name = "dgreedy", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a config and write the trace, summary and bounds files.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `outputs.dir`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Tabulate E_r and achieved value across consensus lengths.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `a:b` or `a,b,c`; defaults to `sweep.T`.
        #[arg(long = "T")]
        t: Option<String>,
        /// `auto` or a number; defaults to `sweep.psi`, then `psi`.
        #[arg(long)]
        psi: Option<PsiConfig>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Centralized reference selections on the average objective.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        which: BaselineKind,
        /// Write JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit a recorded trace and write the bounds JSON.
    Analyze {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Audit a recorded trace and print the report.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Check a config without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DG_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out_dir } => commands::run_experiment(config, out_dir.as_deref()),
        Command::Sweep {
            config,
            t,
            psi,
            out,
        } => commands::sweep(config, t.as_deref(), *psi, out.as_deref()),
        Command::Baseline { config, which, out } => {
            commands::baseline(config, *which, out.as_deref())
        }
        Command::Analyze { trace, config, out } => commands::analyze(trace, config, out),
        Command::Replay { trace, config } => commands::replay(trace, config),
        Command::ValidateConfig { config } => commands::validate_config(config),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
