mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;

#[derive(Parser, Debug)]
#[command(name = "gwork", version, about = "Global-workspace experiments on a procedural shapes dataset")]
struct Cli {
    /// Overrides the command's seed (recorded in the manifest).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Independent grid cells run in parallel on this many threads.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML experiment configuration; omitted sections use defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset directory.
    GenData {
        /// Training records.
        #[arg(long)]
        k: Option<usize>,
        /// Held-out records.
        #[arg(long)]
        n_test: Option<usize>,
        /// Also write a PPM image per record.
        #[arg(long)]
        images: bool,
        /// Reads the `[data.dataset]` section; flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model (the `[train]` section).
    Train(Common),
    /// Evaluate a trained run directory on the test set.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Output directory of a previous `train`.
        #[arg(long)]
        run: PathBuf,
    },
    /// Variant × N × seed grid (the `[ablation]` section).
    Ablate(Common),
    /// Odd-one-out triplets and baselines; with `--run`, also scores that model.
    Ooo {
        #[command(flatten)]
        common: Common,
        /// Output directory of a previous `train` to score.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Unpaired-data sweep (the `[sweep]` section).
    Sweep(Common),
    /// Coefficient grid search (the `[select]` section).
    Select(Common),
    /// Plot-data files from `ablate` and `sweep` outputs.
    Report {
        /// Directories produced by `ablate` or `sweep`.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                CliError::Runtime(_) => ExitCode::from(1),
            }
        }
    }
}
