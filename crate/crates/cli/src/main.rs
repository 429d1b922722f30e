use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lvgm_cli::{run, Command, Flags};

#[derive(Parser)]
#[command(name = "lvgm", version, about = "Latent-variable graphical models: simulate, fit, select and evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a ground truth and samples from it.
    Generate(CommonArgs),
    /// Fit one penalized model.
    Fit(CommonArgs),
    /// Stability selection followed by a constrained refit.
    Select(CommonArgs),
    /// Held-out likelihood and structure metrics of fitted models.
    Evaluate(CommonArgs),
    /// Structure-recovery sweep over sample sizes.
    Experiment(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Gaussian only: solve the reduced d x d problem.
    #[arg(long)]
    reduced: bool,
    /// Fit without latent variables (L = 0).
    #[arg(long)]
    no_latent: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Generate(a) => (Command::Generate, a),
        Cmd::Fit(a) => (Command::Fit, a),
        Cmd::Select(a) => (Command::Select, a),
        Cmd::Evaluate(a) => (Command::Evaluate, a),
        Cmd::Experiment(a) => (Command::Experiment, a),
    };
    let flags = Flags {
        reduced: args.reduced,
        no_latent: args.no_latent,
    };
    match run(command, &args.config, flags) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lvgm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
