use std::path::PathBuf;

use clap::{Parser, Subcommand};
use dinsys_cli::{execute, Command, ExitCode, Options};

#[derive(Parser)]
#[command(
    name = "dinsys",
    version,
    about = "Variational time stepping for damped second-order inclusions"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,

    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for `sweep` (default: available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Count warnings and admissibility notes as check failures.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand)]
enum Sub {
    /// Run one trajectory and write its reports.
    Run { config: PathBuf },
    /// Run the `[sweep]` step list and write convergence.csv.
    Sweep { config: PathBuf },
    /// Sample the structural assumptions of the configured problem.
    Audit { config: PathBuf },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() {
                ExitCode::Usage.code()
            } else {
                0
            });
        }
    };
    if cli.jobs == Some(0) {
        eprintln!("dinsys: --jobs must be at least 1");
        std::process::exit(ExitCode::Usage.code());
    }
    let opts = Options {
        out: cli.out,
        jobs: cli.jobs,
        strict: cli.strict,
    };
    let (command, path) = match cli.command {
        Sub::Run { config } => (Command::Run, config),
        Sub::Sweep { config } => (Command::Sweep, config),
        Sub::Audit { config } => (Command::Audit, config),
    };
    std::process::exit(execute(command, &path, &opts).code());
}
