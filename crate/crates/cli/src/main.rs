use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hippo_cli::commands::{self, Globals};

#[derive(Parser)]
#[command(
    name = "hippo-lab",
    version,
    about = "Train and evaluate hierarchical policies with randomized time-commitment"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Run configuration (TOML with [train], [env] and [eval] tables).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override one config value, e.g. `lr=1e-3` or `env.size=10`.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Rollout worker threads.
    #[arg(long, global = true, env = "HIPPO_LAB_WORKERS")]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write metrics, summary and checkpoints.
    Train {
        /// Continue from the training state in --out.
        #[arg(long)]
        resume: bool,
        #[arg(long, default_value_t = 10)]
        checkpoint_every: usize,
    },
    /// Gradient, diversity and baseline checks on scripted skills.
    Gradcheck {
        /// Probe trajectories for the diversity report.
        #[arg(long)]
        n_traj: Option<usize>,
        /// Corrupt one analytic gradient entry (the checks must then fail).
        #[arg(long)]
        corrupt_gradient: bool,
    },
    /// Zero-shot evaluation of trained policies on perturbed dynamics.
    Transfer {
        /// `name=path` to a run directory or a policy checkpoint.
        #[arg(long = "policy", required = true)]
        policies: Vec<String>,
        #[arg(long, default_value = "env")]
        env_name: String,
    },
    /// Train over a list of values of one hyperparameter.
    Sweep {
        /// `n` or `time_commitment`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; bounds as `min-max`.
        #[arg(long)]
        values: String,
    },
    /// Run the seven ablation variants.
    Ablate,
    /// Plot one metric of one or more runs as SVG.
    Plot {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "mean_return")]
        metric: String,
    },
    /// Collect one batch and print it as JSON lines.
    InspectBatch {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        iteration: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = Globals {
        config: cli.global.config,
        overrides: cli.global.overrides,
        seed: cli.global.seed,
        out: cli.global.out,
        workers: cli.global.workers,
    };
    let r = match &cli.command {
        Command::Train {
            resume,
            checkpoint_every,
        } => commands::train(&g, *resume, *checkpoint_every),
        Command::Gradcheck {
            n_traj,
            corrupt_gradient,
        } => commands::gradcheck(&g, *n_traj, *corrupt_gradient),
        Command::Transfer { policies, env_name } => commands::transfer(&g, policies, env_name),
        Command::Sweep { axis, values } => commands::sweep(&g, axis, values),
        Command::Ablate => commands::ablate(&g),
        Command::Plot { runs, metric } => commands::plot(&g, runs, metric),
        Command::InspectBatch { checkpoint, iteration } => {
            commands::inspect_batch(&g, checkpoint.as_deref(), *iteration)
        }
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
