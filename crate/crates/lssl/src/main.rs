use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lssl::commands::{run, Command};
use lssl::config::{load_config, SEED_ENV};

#[derive(Parser)]
#[command(name = "lssl", version, about = "Longitudinal self-supervised representation learning pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic training and held-out cohorts.
    Generate(Args),
    /// Train the model on the training cohort.
    Train(Args),
    /// Score the trained model against the disentanglement conditions.
    Verify(Args),
    /// Brain-age analysis and latent traversal.
    Analyze(Args),
    /// Cross-validated diagnosis classification and baselines.
    Classify(Args),
    /// Render figures from the analysis and classification outputs.
    Plot(Args),
}

#[derive(clap::Args)]
struct Args {
    /// JSON run config, or a run_metadata.json to replay.
    #[arg(long)]
    config: PathBuf,
    /// Output root shared by every command.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Generate(a) => (Command::Generate, a),
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Verify(a) => (Command::Verify, a),
        Cmd::Analyze(a) => (Command::Analyze, a),
        Cmd::Classify(a) => (Command::Classify, a),
        Cmd::Plot(a) => (Command::Plot, a),
    };
    let seed = std::env::var(SEED_ENV).ok();
    let result = load_config(&args.config, seed.as_deref()).and_then(|config| run(command, &config, &args.out));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lssl {}: {e}", command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
