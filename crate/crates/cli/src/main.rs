//! Command-line front end binding the toolkit into reproducible
//! experiments. Exit codes: 0 success, 1 usage error, 2 runtime failure.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use settings::Settings;

#[derive(Parser, Debug)]
#[command(name = "defocus", version, about = "Coded-aperture design and depth-from-defocus experiments")]
pub struct Cli {
    /// key = value configuration file, applied before flags
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random choice in the command
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on worker threads (results do not depend on this)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Form coded images from all-focus scenes and their depth maps
    Simulate {
        /// Directory of `<id>_image.pgm` + `<id>_depth.txt` scenes
        #[arg(long)]
        scene_dir: PathBuf,
        /// Aperture code file
        #[arg(long)]
        code: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only simulate these scene ids (default: all)
        #[arg(long)]
        scene_id: Vec<String>,
        /// Additive Gaussian noise stddev (0 disables)
        #[arg(long)]
        noise_sigma: Option<f64>,
        /// Per-tile blur boundary: reflect | cyclic
        #[arg(long)]
        boundary: Option<String>,
    },
    /// Score aperture codes by their pairwise KL depth-discriminability
    EvalCode {
        /// Code file; repeat for several codes
        #[arg(long, required = true)]
        code: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated kernel sizes (default 1,3,...,max)
        #[arg(long)]
        scales: Option<String>,
    },
    /// Estimate a blur-size map from a coded image
    Estimate {
        /// Coded grayscale image (.pgm or .png)
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        code: PathBuf,
        /// wiener | cnn
        #[arg(long)]
        method: String,
        /// Trained checkpoint (required for --method cnn)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Ground-truth size map for accuracy metrics
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        nsr: Option<f64>,
        #[arg(long)]
        boundary: Option<String>,
    },
    /// Jointly train the aperture code and the blur-size classifier
    Train {
        #[arg(long)]
        scene_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Continue from a checkpoint written by an earlier run
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Side-by-side accuracy/KL table for (code, method) pairs
    Compare {
        /// `name=code_path,method[,checkpoint_path]`; repeat per entry
        #[arg(long, required = true)]
        entry: Vec<String>,
        /// Held-out scenes to simulate and estimate
        #[arg(long)]
        scene_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        nsr: Option<f64>,
        #[arg(long)]
        boundary: Option<String>,
        #[arg(long)]
        noise_sigma: Option<f64>,
    },
    /// Generate a synthetic scene corpus
    MakeScenes {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 160)]
        height: usize,
        #[arg(long, default_value_t = 160)]
        width: usize,
        /// Comma-separated texture set: noise,stripes,checker,flat
        #[arg(long)]
        textures: Option<String>,
        #[arg(long, default_value_t = 3)]
        min_planes: usize,
        #[arg(long, default_value_t = 5)]
        max_planes: usize,
    },
}

/// Usage problems exit 1; anything that fails while running exits 2.
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<defocus_core::Error> for CliError {
    fn from(e: defocus_core::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: building thread pool: {e}");
            return ExitCode::from(2);
        }
    }

    let mut settings = Settings::default();
    if let Some(config) = &cli.config {
        if let Err(e) = settings.apply_file(config) {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    }
    if let Some(seed) = cli.seed {
        settings.seed = seed;
    }

    match commands::dispatch(cli.command, settings) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
