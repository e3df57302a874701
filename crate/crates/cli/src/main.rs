mod commands;
mod reproduce;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "qst", version, about = "Pauli-4 tomography with a two-direction GRU generative model")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Master seed; every random stream derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat key=value file supplying defaults; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample measurement outcomes of a target state.
    GenData(commands::GenDataArgs),
    /// Train a model and select a checkpoint by loss fluctuation.
    Train(commands::TrainArgs),
    /// Classical and quantum fidelity of a checkpoint against a target state.
    Eval(commands::EvalArgs),
    /// Emit the CSV data behind one of the figures.
    Reproduce(reproduce::ReproduceArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = settings::Settings::load(&cli.common).and_then(|s| match &cli.command {
        Command::GenData(a) => commands::gen_data(&s, a),
        Command::Train(a) => commands::train(&s, a),
        Command::Eval(a) => commands::eval(&s, a),
        Command::Reproduce(a) => reproduce::run(&s, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
