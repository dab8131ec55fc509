use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gmcf::io::commands;

/// Graphical mean curvature flow between model spaces.
#[derive(Parser)]
#[command(name = "gmcf", version)]
struct Cli {
    /// Output directory (overrides GMCF_OUTPUT_DIR and the config file).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a flow from a TOML config; writes series.csv and summary.json.
    Run { config: PathBuf },
    /// Sample the pointwise inequalities; writes inequalities.json.
    VerifyInequalities {
        /// Suite file (TOML); the built-in suite when omitted.
        spec: Option<PathBuf>,
        /// Override the sample count of every job.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Residual of the ln *Ω evolution equation over a refinement ladder.
    Residual { config: PathBuf },
    /// Re-render a summary from an output directory and check its flags.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { commands::EXIT_CONFIG } else { commands::EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let out = cli.output_dir.as_deref();
    let code = match cli.command {
        Command::Run { config } => commands::cmd_run(&config, out),
        Command::VerifyInequalities { spec, samples } => {
            commands::cmd_verify_inequalities(spec.as_deref(), samples, out)
        }
        Command::Residual { config } => commands::cmd_residual(&config, out),
        Command::Report { dir } => commands::cmd_report(&dir),
    };
    ExitCode::from(code as u8)
}
