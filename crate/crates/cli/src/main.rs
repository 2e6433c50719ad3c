//! `decision-engine`: run channels, inspect archives, control live channels.

mod control;
mod inspect;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "decision-engine", version, about = "Rule-driven resource provisioning engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a configuration and run its channels.
    Run(run::RunArgs),
    /// Print archived generations or a product's history.
    Inspect(inspect::InspectArgs),
    /// Send a lifecycle command to a live engine.
    Channel {
        /// Engine configuration; names the control socket.
        #[arg(long)]
        config: PathBuf,
        #[arg(value_enum)]
        action: Action,
        /// Channel id.
        id: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Action {
    Up,
    Down,
    Status,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(args) => run::run(args),
        Command::Inspect(args) => inspect::inspect(args),
        Command::Channel { config, action, id } => control::client(&config, action, &id),
    };
    ExitCode::from(code)
}
