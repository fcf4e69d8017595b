pub mod args;
pub mod commands;
pub mod report;

use args::{Cli, Command};
use commands::Outcome;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_COUNTERFACTUAL_FAILURE: i32 = 2;

/// Runs one parsed command and maps its outcome to an exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::TrainToy(a) => commands::train_toy(a),
        Command::Mine(a) => commands::mine(a),
        Command::Explain(a) => commands::explain(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(Outcome::Ok) => EXIT_OK,
        Ok(Outcome::CounterfactualFailure) => EXIT_COUNTERFACTUAL_FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
