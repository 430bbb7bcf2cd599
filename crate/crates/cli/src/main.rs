mod commands;
mod error;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Statistical-feature GAN for unpaired image-to-image translation.
#[derive(Debug, Parser)]
#[command(name = "spatchgan", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalFlags,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command. Values given here override the config file,
/// which overrides the built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalFlags {
    /// TOML experiment config.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the total iteration count; warm-up is rescaled to match.
    #[arg(long, global = true)]
    pub iters: Option<u64>,
    /// Continue training from this checkpoint.
    #[arg(long, global = true, value_name = "CHECKPOINT")]
    pub resume: Option<PathBuf>,
    /// Discriminator variant: spatchgan or patchgan.
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// Comma-separated statistics, e.g. `mean,max,stddev`.
    #[arg(long, global = true)]
    pub stats: Option<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes checkpoints, metrics.csv, eval.csv and samples.
    Train {
        /// Overrides `data.source_dir`.
        #[arg(long, value_name = "DIR")]
        source: Option<PathBuf>,
        /// Overrides `data.target_dir`.
        #[arg(long, value_name = "DIR")]
        target: Option<PathBuf>,
    },
    /// Translate every image of a directory, keeping file names.
    Translate {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
        /// Also write B(u(G(x))) to `low_res_cycle/`.
        #[arg(long)]
        low_res_cycle: bool,
    },
    /// Per-image discriminator outputs as CSV, with per-head means.
    InspectDisc {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
        /// Also render the per-head means as a bar plot.
        #[arg(long)]
        plot: bool,
    },
    /// FID and KID between two image directories.
    Evaluate {
        #[arg(long, value_name = "DIR")]
        generated: PathBuf,
        #[arg(long, value_name = "DIR")]
        reference: PathBuf,
        /// Embedder tag; defaults to `eval.embedder`.
        #[arg(long)]
        embedder: Option<String>,
        /// KID block size; defaults to `eval.kid_block_size`, then min(n, 100).
        #[arg(long)]
        kid_block: Option<usize>,
        /// Images are resized to this side length before embedding.
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Write the synthetic stripes and checkers domains plus a matching config.
    MakeToyData {
        /// Images per domain.
        #[arg(long, default_value_t = 500)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
