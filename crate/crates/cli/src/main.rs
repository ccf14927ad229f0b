use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qvt_cli::{cmd_eval, cmd_fetch, cmd_resources, cmd_sample_demo, cmd_train, cmd_verify};

#[derive(Parser)]
#[command(name = "qvt", about = "Excitation-preserving circuit simulator and classifier trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download a dataset archive into the cache and verify its checksum.
    Fetch {
        /// Dataset id, e.g. retinamnist or breastmnist.
        id: String,
        /// Cache directory (default: $QVT_DATA_DIR or ~/.cache/qvt-data).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Print the circuit-resource budget for an architecture.
    Resources {
        /// Architecture name, e.g. ortho_transformer.
        #[arg(long)]
        arch: String,
        /// Rotation layout, e.g. pyramid or butterfly.
        #[arg(long, default_value = "pyramid")]
        layout: String,
        /// Token width.
        #[arg(long, default_value_t = 16)]
        dim: usize,
        /// Patches per image side.
        #[arg(long, default_value_t = 4)]
        patches: usize,
        /// Residual blocks.
        #[arg(long, default_value_t = 4)]
        layers: usize,
    },
    /// Train the runs described by a JSON configuration file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads (default: one per core).
        #[arg(long)]
        jobs: Option<usize>,
        /// Continue from the latest checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Re-score a checkpoint on one dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Run the self-verification checks.
    Verify {
        /// loaders, layers, gradients, compound, sampling, or all.
        #[arg(long, default_value = "all")]
        scope: String,
    },
    /// Sample a circuit stored as JSON and print outcome frequencies.
    SampleDemo {
        #[arg(long)]
        circuit: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        shots: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Input bitstring (default: one excitation on the first wire).
        #[arg(long)]
        input: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fetch { id, dir } => cmd_fetch(&id, dir.as_deref()),
        Command::Resources { arch, layout, dim, patches, layers } => {
            cmd_resources(&arch, &layout, dim, patches, layers)
        }
        Command::Train { config, jobs, resume } => cmd_train(&config, jobs, resume),
        Command::Eval { checkpoint, split } => cmd_eval(&checkpoint, &split),
        Command::SampleDemo { circuit, shots, seed, input } => {
            cmd_sample_demo(&circuit, shots, seed, input.as_deref())
        }
        Command::Verify { scope } => match cmd_verify(&scope) {
            Ok((report, true)) => Ok(report),
            Ok((report, false)) => {
                print!("{report}");
                eprintln!("verification failed");
                return ExitCode::FAILURE;
            }
            Err(e) => Err(e),
        },
    };
    match outcome {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
