//! `voxpilot`: dataset generation, training, evaluation and the drone
//! service from one binary.
//!
//! Every command takes `--seed` and an optional `--config` key=value file
//! (`audio.*` feature settings, `dataset.*`, `train.*`, `p1.*`, `p2.*`,
//! `p3.*`, `eval.*`). Command-line flags win over the file.

mod commands;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "voxpilot", version, about = "Voice-command recognition and drone control")]
struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic command dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Renderings per command (config `dataset.per_class`, default 200).
        #[arg(long)]
        per_class: Option<usize>,
        /// Synthetic speakers (config `dataset.speakers`, default 8).
        #[arg(long)]
        speakers: Option<usize>,
    },
    /// Expand a dataset with four augmented variants per entry.
    Augment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one or more pipelines (`p1`, `p2`, `p3` or `all`).
    Train {
        #[arg(required = true)]
        pipelines: Vec<String>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
    },
    /// Classification report and latency for selected pipelines.
    Eval {
        #[command(flatten)]
        target: EvalTarget,
        /// Pipelines to evaluate; all available ones when omitted.
        #[arg(long = "pipeline")]
        pipelines: Vec<String>,
    },
    /// Comparative summary of all three pipelines on the same samples.
    Compare {
        #[command(flatten)]
        target: EvalTarget,
        /// Also score freshly initialised networks of the same shape.
        #[arg(long)]
        untrained: bool,
    },
    /// Run the drone simulator over UDP, or replay a command log.
    Sim {
        #[arg(long, default_value = voxpilot_drone::udp::DEFAULT_UDP_ADDR)]
        udp: String,
        /// Apply each line of this file and print the final state instead.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Start the HTTP service and the UDP simulator.
    Serve {
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value = voxpilot_drone::api::DEFAULT_HTTP_ADDR)]
        http: String,
        #[arg(long, default_value = voxpilot_drone::udp::DEFAULT_UDP_ADDR)]
        udp: String,
        /// Centimetres per movement command.
        #[arg(long, default_value_t = voxpilot_drone::DEFAULT_STEP_CM)]
        step: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VoteArg {
    Majority,
    Weighted,
}

#[derive(Debug, Args)]
struct EvalTarget {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    models: PathBuf,
    /// Reports are written here.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Pipeline 2 rejection threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Pipeline 3 neighbour count.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    vote: Option<VoteArg>,
    /// Pipeline 3 rejects matches farther than this.
    #[arg(long)]
    reject_distance: Option<f64>,
    /// Discarded calls before timing.
    #[arg(long, default_value_t = voxpilot_core::eval::DEFAULT_WARMUP)]
    warmup: usize,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let ctx = commands::Context::new(cli.seed, cli.config.as_deref())?;
    match cli.command {
        Command::GenData { out, per_class, speakers } => commands::gen_data(&ctx, &out, per_class, speakers),
        Command::Augment { data, out } => commands::augment(&ctx, &data, &out),
        Command::Train { pipelines, data, models } => commands::train(&ctx, &pipelines, &data, &models),
        Command::Eval { target, pipelines } => commands::eval(&ctx, &target, &pipelines),
        Command::Compare { target, untrained } => commands::compare(&ctx, &target, untrained),
        Command::Sim { udp, replay } => commands::sim(&udp, replay.as_deref()),
        Command::Serve { models, http, udp, step } => commands::serve(&ctx, &models, &http, &udp, step),
    }
}
