use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use demoire::commands;

/// Frequency-split demoiréing: dataset tooling, two-stage training,
/// inference, and numerical self-checks.
#[derive(Parser)]
#[command(name = "demoire", version, disable_help_subcommand = true)]
struct Cli {
    /// Seed override; beats FQF_SEED, which beats the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Split an image into a smooth low component and a signed high residual.
    Decompose {
        #[arg(long)]
        input: PathBuf,
        /// Smoothing levels in the split.
        #[arg(long, default_value_t = 3)]
        levels: usize,
        /// 16-bit PNG for the low component.
        #[arg(long)]
        out_low: PathBuf,
        /// 16-bit PNG for the offset-encoded high component (plus .meta sidecar).
        #[arg(long)]
        out_high: PathBuf,
    },
    /// Rebuild the image from decompose outputs (low + high).
    Recompose {
        #[arg(long)]
        in_low: PathBuf,
        #[arg(long)]
        in_high: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Per-image PSNR of each component after a downsample/upsample round
    /// trip: shows which component survives rescaling.
    ResizeReport {
        /// Directory of .png images.
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        factor: f64,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
    /// Write {id}_moire.png / {id}_clean.png training pairs.
    GenData {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Side of generated synthetic images (ignored with --clean-dir).
        #[arg(long, default_value_t = 128)]
        size: usize,
        /// Take clean images from here instead of generating them.
        #[arg(long)]
        clean_dir: Option<PathBuf>,
    },
    /// Train one stage; writes the checkpoint plus .cfg and .log sidecars.
    Train {
        /// high | low | joint
        #[arg(long)]
        stage: String,
        #[arg(long)]
        data_dir: PathBuf,
        /// key=value config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_ckpt: PathBuf,
        /// Stage-1 high-branch checkpoint (joint stage only).
        #[arg(long)]
        high_ckpt: Option<PathBuf>,
        /// Stage-1 low-branch checkpoint (joint stage only).
        #[arg(long)]
        low_ckpt: Option<PathBuf>,
    },
    /// Run the full pipeline on one image.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// resize | full
        #[arg(long, default_value = "resize")]
        low_mode: String,
    },
    /// Score a dataset directory: id,psnr,ssim per pair plus a mean row.
    Eval {
        #[arg(long)]
        data_dir: PathBuf,
        /// Without this, the moire inputs are scored as-is (a baseline).
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Finite-difference checks of the gradient engine.
    Gradcheck {
        /// all | tensor | blocks | model
        #[arg(long, default_value = "all")]
        module: String,
    },
}

fn run(cli: Cli) -> Result<(), demoire::CliError> {
    match &cli.cmd {
        Cmd::Decompose {
            input,
            levels,
            out_low,
            out_high,
        } => commands::cmd_decompose(input, *levels, out_low, out_high),
        Cmd::Recompose {
            in_low,
            in_high,
            output,
        } => commands::cmd_recompose(in_low, in_high, output),
        Cmd::ResizeReport {
            data_dir,
            factor,
            levels,
        } => commands::cmd_resize_report(data_dir, *factor, *levels),
        Cmd::GenData {
            out_dir,
            count,
            size,
            clean_dir,
        } => {
            let seed = commands::resolve_seed(cli.seed, 0)?;
            commands::cmd_gen_data(out_dir, *count, *size, seed, clean_dir.as_deref())
        }
        Cmd::Train {
            stage,
            data_dir,
            config,
            out_ckpt,
            high_ckpt,
            low_ckpt,
        } => commands::cmd_train(
            stage,
            data_dir,
            config.as_deref(),
            out_ckpt,
            high_ckpt.as_deref(),
            low_ckpt.as_deref(),
            cli.seed,
        ),
        Cmd::Infer {
            ckpt,
            input,
            output,
            low_mode,
        } => commands::cmd_infer(ckpt, input, output, low_mode),
        Cmd::Eval { data_dir, ckpt } => commands::cmd_eval(data_dir, ckpt.as_deref()),
        Cmd::Gradcheck { module } => commands::cmd_gradcheck(module),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
