use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod manifest;
mod settings;

/// Virtual NO₂ sensors: synthetic cities, GraphSAGE and baseline training,
/// transfer learning, leave-one-location-out evaluation and plots.
#[derive(Parser, Debug)]
#[command(name = "vsensor", version)]
struct Cli {
    /// error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic city as locations.csv + readings.csv
    Synth(SynthArgs),
    /// Train a model on all sensors of a dataset
    Train(TrainArgs),
    /// Pretrain on a source city and fine-tune on a target city
    Transfer(TransferArgs),
    /// Leave-one-location-out evaluation, or compare two reports
    Eval(EvalArgs),
    /// Roll out a trained model at one location
    Predict(PredictArgs),
    /// SVG of actual vs predicted NO₂ at one location
    Plot(PlotArgs),
}

#[derive(Args, Debug, Default)]
pub struct ConfigArg {
    /// JSON object of flag values; explicit flags win
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub sensors: Option<usize>,
    #[arg(long)]
    pub hours: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use the large source-city preset (60 sensors, London-sized area)
    #[arg(long)]
    pub source_city: bool,
    #[arg(long)]
    pub missing_rate: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    /// sage, mlp, cnn or gbt
    #[arg(long)]
    pub model: Option<String>,
    /// GraphSAGE aggregator: mean, maxpool, meanpool or attention
    #[arg(long)]
    pub aggregator: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Neighbours per sensor in the k-NN graph
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    #[arg(long)]
    pub finetune_lr: Option<f64>,
    /// Parameter-name prefix to keep fixed while fine-tuning (repeatable)
    #[arg(long)]
    pub freeze: Vec<String>,
    /// Standardize the target with the source city's statistics
    #[arg(long)]
    pub source_stats: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "compare")]
    pub data: Option<PathBuf>,
    /// Reuse the configuration stored in a checkpoint
    #[arg(long, conflicts_with = "compare")]
    pub ckpt: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Improvement table of NEW over BASE
    #[arg(long, num_args = 2, value_names = ["BASE", "NEW"])]
    pub compare: Option<Vec<PathBuf>>,
    #[arg(long, required_unless_present = "compare")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub sensor: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub sensor: String,
    /// Checkpoint to roll out
    #[arg(long, required_unless_present = "predictions")]
    pub ckpt: Option<PathBuf>,
    /// Existing `timestamp,predicted_no2_ugm3` CSV instead of a checkpoint
    #[arg(long, conflicts_with = "ckpt")]
    pub predictions: Option<PathBuf>,
    /// First hour of the window (RFC 3339); defaults to the second frame
    #[arg(long)]
    pub start: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub hours: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Transfer(a) => commands::transfer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Plot(a) => commands::plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
