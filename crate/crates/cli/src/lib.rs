//! Library surface of the command-line tool, so integration tests can call
//! command internals directly.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;

use error::{CliError, Result};

pub const USAGE: &str = "\
mmfs — multimodal sentiment fusion workbench

USAGE: mmfs <COMMAND> [FLAGS]

COMMANDS:
  synth      generate the synthetic compositional dataset
             --out DIR [--n N] [--image-size N] [--noise S] [--seed N]
  train      train one model kind
             --model KIND --data PATH [--config FILE] [--out DIR] [--seed N]
             [--epochs N] [--batch-size N] [--lr F] [--threads N]
             [--profile desk|paper] [--freeze-encoders]
  eval       evaluate a checkpoint
             --checkpoint PATH --data PATH [--split train|val|test|all]
  compare    train and evaluate all seven model kinds, emit report.csv/.json
             --data PATH [--config FILE] [--out DIR] [--seed N] [--threads N]
  gradcheck  verify analytic gradients against finite differences
             [--scope ops|encoders|fusion|all]

Model kinds: Bert, ResNet, CMACModel, HSTECModel, OTEModel, NativeCatModel,
NativeCombineModel. MMFS_DATA_ROOT supplies --data when it is omitted.
Exit codes: 0 success, 1 verification failure, 2 usage or IO error.";

/// Dispatches a full argument vector (without the binary name).
pub fn run(argv: &[String]) -> Result<()> {
    let Some(command) = argv.first() else {
        return Err(CliError::Usage(format!("missing command\n{USAGE}")));
    };
    let args = args::Args::parse(&argv[1..])?;
    if args.switch("help") {
        println!("{USAGE}");
        return Ok(());
    }
    match command.as_str() {
        "synth" => commands::cmd_synth(&args),
        "train" => commands::cmd_train(&args),
        "eval" => commands::cmd_eval(&args),
        "compare" => commands::cmd_compare(&args),
        "gradcheck" => commands::cmd_gradcheck(&args),
        other => Err(CliError::Usage(format!(
            "unknown command {other:?}\n{USAGE}"
        ))),
    }
}
