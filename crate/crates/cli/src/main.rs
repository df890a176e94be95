use std::process::ExitCode;

use aaaseg_cli::commands::{
    self, EvaluateArgs, Global, GradcheckArgs, PhantomArgs, PredictArgs, PreprocessArgs, ReportArgs, TrainArgs,
};
use aaaseg_cli::exit_code;
use clap::{Parser, Subcommand};

/// Aneurysm segmentation pipeline: phantoms, preprocessing, training,
/// prediction and evaluation.
#[derive(Debug, Parser)]
#[command(name = "aaaseg", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic phantom cohort
    Phantom(PhantomArgs),
    /// Crop, window and resample one volume
    Preprocess(PreprocessArgs),
    /// Train the network on a cohort
    Train(TrainArgs),
    /// Predict probability maps and post-processed masks
    Predict(PredictArgs),
    /// Score predicted masks against ground truth
    Evaluate(EvaluateArgs),
    /// Check every analytic gradient against finite differences
    Gradcheck(GradcheckArgs),
    /// Summarize a report CSV by stage
    Report(ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let (name, result) = match &cli.command {
        Command::Phantom(a) => ("phantom", commands::phantom(g, a)),
        Command::Preprocess(a) => ("preprocess", commands::preprocess(g, a)),
        Command::Train(a) => ("train", commands::train(g, a)),
        Command::Predict(a) => ("predict", commands::predict(g, a)),
        Command::Evaluate(a) => ("evaluate", commands::evaluate(g, a)),
        Command::Gradcheck(a) => ("gradcheck", commands::gradcheck(g, a)),
        Command::Report(a) => ("report", commands::report(g, a)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {name}: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
