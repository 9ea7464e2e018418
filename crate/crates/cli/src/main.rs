//! `threer`: forward/inverse passes, training, evaluation and reports.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "threer",
    version,
    about = "Invertible rescaling, grain removal and display-power reduction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Grainy,
    Clean,
    TrueLatent,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Downscale an image, writing the 8-bit LR PNG and optionally the latent.
    Forward {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_lr: PathBuf,
        #[arg(long)]
        out_latent: Option<PathBuf>,
    },
    /// Upscale an LR image.
    Inverse {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "grainy")]
        mode: Mode,
        /// Latent written by `forward`; only for true-latent mode.
        #[arg(long)]
        latent: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Stage-1 training.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Start from this checkpoint instead of the identity network.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Stage-2 energy fine-tuning of a trained checkpoint.
    Finetune {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Target power reduction rate.
        #[arg(long = "R", alias = "r")]
        rate: f64,
    },
    /// Metrics with sampled latents through the latent block.
    Evaluate {
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Metrics under one latent configuration (1, 2 or 3).
    Ablate {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        config_id: u32,
    },
    /// Energy savings from measured encode/decode times, bitrates and display power.
    EnergyReport {
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long)]
        baseline: String,
        /// key = value file with head_end, delivery, device, display.
        #[arg(long)]
        coefficients: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a procedural grainy/clean corpus and its manifest.
    MakeDataset {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 128)]
        height: usize,
        /// Grain presets cycled over the images.
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3])]
        levels: Vec<usize>,
        /// Override the presets' AR coefficients.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        ar: Option<Vec<f64>>,
        #[arg(long, default_value_t = 4)]
        test_every: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare backprop with central differences on a reduced network.
    Gradcheck {
        #[arg(long, default_value_t = 2)]
        blocks: usize,
        #[arg(long, default_value_t = 4)]
        hidden: usize,
        #[arg(long, default_value_t = 3)]
        layers: usize,
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[arg(long, default_value_t = 3e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write every checked entry as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Training config (key = value); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest; the train split is used.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured iteration count of the stage.
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long)]
    out_dir: PathBuf,
    /// Config whose power-model keys are used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Round the LR image to 8 bits before the inverse pass.
    #[arg(long)]
    quantize_lr: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
