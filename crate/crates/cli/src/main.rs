use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use unlearn_forge::config::ExperimentConfig;
use unlearn_forge::pipeline::{exit_code, Stage, StageError, Workspace};

#[derive(Parser)]
#[command(
    name = "unlearn-forge",
    version,
    about = "Gradient-penalty unlearning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one pipeline stage, or all of them.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = StageArg::All)]
        stage: StageArg,
    },
    /// Train a fresh model without the forget set and compare it with the
    /// unlearned one.
    Retrain {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Gen,
    Train,
    Attack,
    Unlearn,
    Report,
    All,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Gen => Stage::Gen,
            StageArg::Train => Stage::Train,
            StageArg::Attack => Stage::Attack,
            StageArg::Unlearn => Stage::Unlearn,
            StageArg::Report => Stage::Report,
            StageArg::All => Stage::All,
        }
    }
}

fn execute(config: &Path, stage: Stage) -> Result<(), StageError> {
    let cfg = ExperimentConfig::load(config).map_err(|error| StageError { stage, error })?;
    let ws = Workspace::new(cfg);
    for s in stage.sequence() {
        println!("{}", ws.run_stage(s)?);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (config, stage) = match cli.command {
        Command::Run { config, stage } => (config, stage.into()),
        Command::Retrain { config } => (config, Stage::Retrain),
    };
    match execute(&config, stage) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e.error) as u8)
        }
    }
}
