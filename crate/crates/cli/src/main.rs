//! Command-line entry points: meta-training, single-agent training,
//! checkpoint analysis, the MDP-to-CB oracle sweep, and the
//! component-replacement baseline suite.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 numerical
//! failure (all-NaN meta-training), 4 oracle failure.

mod cmd_analyze;
mod cmd_baseline;
mod cmd_meta;
mod cmd_oracle;
mod cmd_train;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub(crate) const EXIT_CONFIG: u8 = 2;
pub(crate) const EXIT_NUMERICAL: u8 = 3;
pub(crate) const EXIT_ORACLE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "banditforge",
    version,
    about = "Meta-learning of synthetic contextual bandits for classic control"
)]
struct Cli {
    /// Worker threads for the inner-loop pool (env BANDITFORGE_WORKERS,
    /// default: logical cores). Results are worker-count invariant.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train an SCB population against an evaluation environment.
    MetaTrain {
        /// TOML configuration file (see configs/).
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for logs, checkpoints, and the manifest.
        #[arg(long)]
        out: PathBuf,
        /// Resume from a checkpoint written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train a single agent in an evaluation environment or inside an SCB.
    Train {
        /// Evaluation environment id (e.g. "CartPole-v1").
        #[arg(long, conflicts_with = "scb")]
        env: Option<String>,
        /// SCB checkpoint to train inside (evaluation still runs in its EE).
        #[arg(long)]
        scb: Option<PathBuf>,
        #[arg(long)]
        algo: String,
        /// "fixed" table values or "sampled" draws.
        #[arg(long, default_value = "fixed")]
        hp: String,
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Frozen-policy evaluation cadence in steps (default steps/10).
        #[arg(long)]
        eval_every: Option<usize>,
    },
    /// Extract interpretability artifacts from an SCB checkpoint.
    Analyze {
        #[arg(long)]
        scb: PathBuf,
        /// One of: action-map, importance, cb-optimal.
        #[arg(long)]
        what: String,
        /// Grid spec, one entry per observation dim: "lo:hi:n" to sweep or a
        /// single number to fix (comma separated).
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the MDP-to-CB exactness sweep on random tabular MDPs.
    Oracle {
        #[arg(long, default_value_t = 100)]
        n_mdps: usize,
        #[arg(long, default_value_t = 12)]
        max_states: usize,
        /// q_star, neg_distance, indicator, or all.
        #[arg(long, default_value = "all")]
        variant: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Component-replacement baseline suite around an SCB checkpoint.
    Baseline {
        #[arg(long)]
        env: String,
        #[arg(long)]
        scb: PathBuf,
        /// Cells "reward:init" comma separated; reward in {synthetic, bc_kl,
        /// action_distance, expert_q}, init in {synthetic, expert_states}.
        #[arg(long, default_value = "synthetic:synthetic")]
        cells: String,
        /// Inner-loop steps per trained agent.
        #[arg(long, default_value_t = 10_000)]
        budget: usize,
        /// Expert bundle path; trained and saved there when missing.
        #[arg(long)]
        expert: Option<PathBuf>,
        /// Algorithms to train per cell, comma separated.
        #[arg(long, default_value = "ppo,sac")]
        algos: String,
        /// Independent runs per (cell, algorithm).
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let workers = cli
        .workers
        .or_else(|| std::env::var("BANDITFORGE_WORKERS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or_else(num_cpus);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
        eprintln!("error: failed to build worker pool: {e}");
        return ExitCode::from(EXIT_CONFIG);
    }

    let result = match cli.command {
        Command::MetaTrain { config, seed, out, resume } => {
            cmd_meta::run(&config, seed, &out, resume.as_deref())
        }
        Command::Train { env, scb, algo, hp, steps, seed, out, eval_every } => cmd_train::run(
            env.as_deref(),
            scb.as_deref(),
            &algo,
            &hp,
            steps,
            seed,
            &out,
            eval_every,
        ),
        Command::Analyze { scb, what, grid, out, seed } => {
            cmd_analyze::run(&scb, &what, grid.as_deref(), &out, seed)
        }
        Command::Oracle { n_mdps, max_states, variant, seed } => {
            cmd_oracle::run(n_mdps, max_states, &variant, seed)
        }
        Command::Baseline { env, scb, cells, budget, expert, algos, runs, seed, out } => {
            cmd_baseline::run(&env, &scb, &cells, budget, expert.as_deref(), &algos, runs, seed, &out)
        }
    };

    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// Maps core errors onto the exit-code contract.
fn exit_code_for(e: &anyhow::Error) -> u8 {
    if let Some(core) = e.downcast_ref::<banditforge_core::Error>() {
        match core {
            banditforge_core::Error::Numerical(_) => EXIT_NUMERICAL,
            _ => EXIT_CONFIG,
        }
    } else {
        EXIT_CONFIG
    }
}

fn num_cpus() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
