use clap::{Parser, Subcommand};
use priorbo::cli;
use priorbo::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "priorbo",
    about = "Bayesian optimization with a prior for the optimum",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment file (benchmark, external objective, or recipe).
    Run {
        config: PathBuf,
        /// Override the config's rng seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for trace.csv and meta.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run and dump prior/model/pseudo-posterior grids at chosen iterations.
    Diag {
        config: PathBuf,
        /// BO iterations at which to write diag_<t>.csv.
        #[arg(long, value_delimiter = ',', default_value = "0,5,10,20")]
        iters: Vec<usize>,
        /// Grid points per dimension.
        #[arg(long, default_value_t = 501)]
        grid: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named experiment recipe (all arms, all seeds).
    Sweep {
        recipe: String,
        #[arg(long)]
        out: PathBuf,
        /// Master seed; per-run seeds derive from it by counter.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Override each arm's total evaluation count.
        #[arg(long)]
        evals: Option<usize>,
    },
    /// Aggregate trace.csv files under a directory into summary.csv.
    Summarize { dir: PathBuf },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Json { .. }
        | Error::InvalidConfig(_)
        | Error::InvalidSpace(_)
        | Error::InvalidPrior(_)
        | Error::UnsupportedDimension(_)
        | Error::UnknownBenchmark(_)
        | Error::UnknownRecipe(_)
        | Error::DimensionMismatch { .. } => 2,
        Error::ObjectiveProcess(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Run { config, seed, out } => cli::cmd_run(config, *seed, out.as_deref())
            .map(|dir| println!("wrote {}", dir.display())),
        Cmd::Diag {
            config,
            iters,
            grid,
            seed,
            out,
        } => cli::cmd_diag(config, iters, *grid, *seed, out.as_deref())
            .map(|dir| println!("wrote {}", dir.display())),
        Cmd::Sweep {
            recipe,
            out,
            seed,
            evals,
        } => cli::cmd_sweep(recipe, out, *seed, *evals)
            .map(|dir| println!("wrote {}", dir.display())),
        Cmd::Summarize { dir } => {
            cli::cmd_summarize(dir).map(|path| println!("wrote {}", path.display()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
