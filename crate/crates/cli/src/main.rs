//! `gln` — face upsampling toolkit CLI.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "gln",
    version,
    about = "Global-local face upsampling: dataset preparation, training, inference, and evaluation",
    after_help = "Inputs are assumed to be pre-aligned 128x128 face crops; \
                  no detection or alignment is performed."
)]
pub struct Cli {
    /// Upsampling factor (4 or 8).
    #[arg(long, global = true)]
    pub scale: Option<usize>,

    /// Refinement network depth (4, 6, or 8).
    #[arg(long, global = true)]
    pub ln: Option<usize>,

    /// Seed for weight initialization and batch shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Model checkpoint (.glnc) to load.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,

    /// key=value config file; command-line flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Degrade aligned 128x128 sources into a train/test dataset.
    Prepare {
        /// Directory of 128x128 grayscale .pgm/.png sources.
        #[arg(long)]
        src: PathBuf,
        /// Output dataset directory (lr/, hr/, manifest.txt).
        #[arg(long)]
        out: PathBuf,
        /// Gaussian blur width; defaults to 1.2 (4x) or 2.4 (8x).
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Reconstruction-stage training.
    Train {
        /// Dataset manifest written by `prepare`.
        #[arg(long)]
        dataset: PathBuf,
        /// Where to write the trained checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Architecture variant.
        #[arg(long, default_value = "gln")]
        model: String,
        #[arg(long)]
        iterations: Option<usize>,
        /// Fixed learning rate.
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        momentum: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        /// Pixel scale: unit (0-1) or byte (0-255).
        #[arg(long)]
        pixel_scale: Option<String>,
        /// Write the per-iteration loss curve (TSV) here.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Also checkpoint every N iterations.
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// Store momentum buffers in the checkpoint.
        #[arg(long)]
        with_optimizer: bool,
    },
    /// Adversarial fine-tuning of a reconstruction-trained checkpoint.
    Finetune {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the discriminator checkpoint.
        #[arg(long)]
        disc_out: Option<PathBuf>,
        /// Adversarial weight; reference values 1e3/2e3 (4x), 4e3/8e3 (8x).
        #[arg(long)]
        lambda: Option<f64>,
        /// `tenth` picks lambda so the initial adversarial loss is one
        /// tenth of the reconstruction loss.
        #[arg(long)]
        lambda_rule: Option<String>,
        #[arg(long)]
        switches: Option<usize>,
        #[arg(long)]
        d_steps: Option<usize>,
        #[arg(long)]
        g_steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        momentum: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        pixel_scale: Option<String>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        with_optimizer: bool,
    },
    /// Upsample one image (or every image in a directory).
    Upsample {
        input: PathBuf,
        output: PathBuf,
        /// RGB path: luminance through the network, chrominance bicubic.
        #[arg(long)]
        color: bool,
        #[arg(long)]
        pixel_scale: Option<String>,
    },
    /// Metrics report (model vs nearest/bicubic baselines).
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        /// Which split to score.
        #[arg(long, default_value = "test")]
        split: String,
        /// Write the per-image CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of every layer kind and the
    /// composed network at toy scale (runs in f64).
    Gradcheck {
        /// Parameters sampled per case.
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Print the receptive field of the refinement stack.
    Rf,
    /// Apply the blur-plus-decimation observation model to an image.
    Degrade {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        pixel_scale: Option<String>,
    },
    /// Iterative back-projection consistency refinement.
    Backproject {
        /// Low-resolution observation.
        #[arg(long)]
        observed: PathBuf,
        /// Starting estimate; defaults to bicubic upsampling of the
        /// observation.
        #[arg(long)]
        estimate: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        iters: usize,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        pixel_scale: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
