mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use zest_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "zest",
    version,
    about = "Zero-shot task specification over frozen embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed. Falls back to the config file, then ZEST_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic store, ledger, goal pools and action classes.
    GenSynth(commands::GenSynthArgs),
    /// Run a goal- or action-selection scenario.
    Evaluate(commands::EvaluateArgs),
    /// Label every trajectory with similarity rewards.
    LabelRewards(commands::LabelArgs),
    /// Train a pairwise-ranking reward network on similarity-ranked trajectories.
    TrainTrex(commands::TrainTrexArgs),
    /// Pairwise accuracy of a reward network against ground-truth progress.
    EvalTrex(commands::EvalTrexArgs),
    /// Filtered behavior cloning on the synthetic control benchmark.
    Bc(commands::BcArgs),
    /// Goal-sample ablation.
    Ablate(commands::AblateArgs),
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenSynth(a) => commands::gen_synth(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::LabelRewards(a) => commands::label_rewards(&a),
        Command::TrainTrex(a) => commands::train_trex(&a),
        Command::EvalTrex(a) => commands::eval_trex(&a),
        Command::Bc(a) => commands::bc(&a),
        Command::Ablate(a) => commands::ablate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
