use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dlen::experiment::commands::{self, Context, EvalOptions, RankSimOptions};
use dlen::experiment::ExperimentError;

#[derive(Debug, Parser)]
#[command(name = "dlen", version, about = "Latent-engagement multi-task models on synthetic feeds")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true, default_value = "dlen.toml")]
    config: PathBuf,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 keeps every run bit-reproducible on any machine.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its latent sidecar.
    GenData,
    /// Train the configured model.
    Train,
    /// Evaluate a checkpoint or the generating oracle.
    Eval(EvalArgs),
    /// Finite-difference gradient check of a tiny model.
    Gradcheck,
    /// Train every benchmarked model over several seeds.
    Bench,
    /// Top-k ranking simulation in both fusion modes.
    RankSim(RankSimArgs),
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, requires = "dataset")]
    sidecar: Option<PathBuf>,
    /// Report of a baseline run; adds per-task gain rows.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Score with the generating world instead of a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    oracle: bool,
    /// Evaluate every row, not only the held-out split.
    #[arg(long)]
    all_rows: bool,
}

#[derive(Debug, Args)]
struct RankSimArgs {
    /// DLEN checkpoint; the oracle rows are always reported.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Also write per-set outcomes.
    #[arg(long)]
    details: bool,
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .map_err(|e| ExperimentError::Config(format!("--threads: {e}")))?;
    let ctx = Context::load(&cli.config, &cli.out, cli.seed)?;
    match cli.command {
        Command::GenData => commands::cmd_gen_data(&ctx),
        Command::Train => commands::cmd_train(&ctx).map(drop),
        Command::Eval(a) => commands::cmd_eval(
            &ctx,
            &EvalOptions {
                checkpoint: a.checkpoint,
                dataset: a.dataset,
                sidecar: a.sidecar,
                baseline: a.baseline,
                oracle: a.oracle,
                all_rows: a.all_rows,
            },
        )
        .map(drop),
        Command::Gradcheck => commands::cmd_gradcheck(&ctx).map(drop),
        Command::Bench => commands::cmd_bench(&ctx).map(drop),
        Command::RankSim(a) => commands::cmd_rank_sim(
            &ctx,
            &RankSimOptions {
                checkpoint: a.checkpoint,
                details: a.details,
            },
        )
        .map(drop),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
