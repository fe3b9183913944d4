//! Command line front end: dataset containers, experiment configuration and
//! the `phantom → recon → wave → invert → eval` pipeline, plus PNG export.

pub mod commands;
pub mod config;
pub mod container;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{
    cmd_eval, cmd_invert, cmd_phantom, cmd_plot, cmd_recon, cmd_wave, evaluate, report_json, Method, Report, Window,
};
pub use config::{EvalConfig, ExperimentConfig, ReconConfig};
pub use container::{Container, Manifest};

use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "elastorec", version, about = "Undersampled spiral MR elastography reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a phantom acquisition (fully sampled spiral k-space).
    Phantom {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Undersample a phantom container and reconstruct the image series.
    Recon {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Arms kept per repetition.
        #[arg(long)]
        arms: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Extract the first-harmonic displacement from reconstructed images.
    Wave {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Invert displacement to complex modulus and stiffness.
    Invert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare a container against the phantom truth and write a JSON report.
    Eval {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one slice of a stored array (`<container>/<array>`) as PNG.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        png: PathBuf,
        /// `auto` (1st-99th percentile) or `lo,hi`.
        #[arg(long, default_value = "auto")]
        window: Window,
        /// Index into the leading dimensions.
        #[arg(long, default_value_t = 0)]
        frame: usize,
    },
}

fn read_config(path: &Option<PathBuf>) -> Result<Option<ExperimentConfig>> {
    path.as_ref()
        .map(|p| {
            let text = std::fs::read_to_string(p)
                .map_err(|e| crate::Error::Data(format!("cannot read {}: {e}", p.display())))?;
            ExperimentConfig::from_json(&text)
        })
        .transpose()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom { config, out, seed } => {
            let cfg = read_config(&config)?.unwrap_or_default();
            cmd_phantom(&cfg, &out, seed)?;
        }
        Command::Recon { method, input, out, seed, arms, config } => {
            cmd_recon(method, &input, &out, seed, arms, read_config(&config)?.as_ref())?;
        }
        Command::Wave { input, out, config } => {
            cmd_wave(&input, &out, read_config(&config)?.as_ref())?;
        }
        Command::Invert { input, out, config } => {
            cmd_invert(&input, &out, read_config(&config)?.as_ref())?;
        }
        Command::Eval { truth, input, out } => {
            cmd_eval(&truth, &input, &out)?;
        }
        Command::Plot { input, png, window, frame } => cmd_plot(&input, &png, window, frame)?,
    }
    Ok(())
}

/// Caps rayon's pool at `ELASTOREC_THREADS` when set.
pub fn configure_threads() {
    if let Some(n) = std::env::var("ELASTOREC_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}
