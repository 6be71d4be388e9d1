//! `evmx`: ingest event streams, build event frames, train and evaluate the
//! spiking AU classifier and the reconstruction cVAE, and synthesise data.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evmx_core::representation::{BoundingBox, Encoding, DEFAULT_CROP_SIDE, DEFAULT_SLICE_US};

use crate::error::Failure;

#[derive(Parser, Debug)]
#[command(name = "evmx", version, about = "Event-camera action unit recognition and frame reconstruction")]
pub struct Cli {
    /// Worker threads for per-clip preprocessing (0 = one per core).
    #[arg(long, global = true, env = "EVMX_THREADS", default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate CSV or EVM1 event files and write them as EVM1.
    Ingest(IngestArgs),
    /// Slice EVM1 streams into cropped two-channel event frames (EVF1).
    Frames(FramesArgs),
    /// Train the spiking classifier on a clip manifest.
    TrainSnn(TrainSnnArgs),
    /// Evaluate a spiking classifier checkpoint on a clip manifest.
    EvalSnn(EvalSnnArgs),
    /// Train the reconstruction cVAE on a pair list.
    TrainCvae(TrainCvaeArgs),
    /// Evaluate reconstructions against reference frames.
    EvalCvae(EvalCvaeArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Sensor {
    Davis346,
    Evk4,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Input files; `.csv` is parsed as `x,y,t,p` rows, anything else as EVM1.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Sensor geometry for CSV input.
    #[arg(long, value_enum, default_value_t = Sensor::Davis346)]
    pub sensor: Sensor,
    /// Sort out-of-order events instead of rejecting them.
    #[arg(long)]
    pub sort: bool,
}

#[derive(Args, Debug)]
pub struct FramesArgs {
    /// EVM1 input files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Slice duration in microseconds.
    #[arg(long, default_value_t = DEFAULT_SLICE_US)]
    pub slice_us: u64,
    /// Crop side length after resizing.
    #[arg(long, default_value_t = DEFAULT_CROP_SIDE)]
    pub crop: usize,
    /// Crop box `x,y,w,h`; defaults to the full sensor.
    #[arg(long)]
    pub bbox: Option<BoundingBox>,
}

#[derive(Args, Debug, Clone)]
pub struct ClipArgs {
    /// Slice duration in microseconds.
    #[arg(long, default_value_t = DEFAULT_SLICE_US)]
    pub slice_us: u64,
    /// Crop side length after resizing.
    #[arg(long, default_value_t = DEFAULT_CROP_SIDE)]
    pub crop: usize,
    /// Input value encoding: raw, binary or unit-max.
    #[arg(long, default_value = "raw")]
    pub encoding: Encoding,
}

#[derive(Args, Debug)]
pub struct TrainSnnArgs {
    /// Clip manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for checkpoints, logs and fold reports.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Optional validation manifest, evaluated after every epoch.
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    /// Leave-one-subject-out cross-validation: one model per subject.
    #[arg(long)]
    pub loocv: bool,
    #[command(flatten)]
    pub clip: ClipArgs,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Truncate clips to at most this many slices.
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Stop early once validation accuracy reaches this value.
    #[arg(long, requires = "val_manifest")]
    pub stop_at_accuracy: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalSnnArgs {
    /// Clip manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint file, or with `--loocv` the directory written by
    /// `train-snn --loocv`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Evaluate every fold model on its held-out subject.
    #[arg(long)]
    pub loocv: bool,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Slice duration in microseconds.
    #[arg(long, default_value_t = DEFAULT_SLICE_US)]
    pub slice_us: u64,
    /// Input value encoding: raw, binary or unit-max.
    #[arg(long, default_value = "raw")]
    pub encoding: Encoding,
    #[arg(long)]
    pub max_steps: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainCvaeArgs {
    /// Pair list of `condition.evf,target.pgm` lines.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Frame side length.
    #[arg(long, default_value_t = DEFAULT_CROP_SIDE)]
    pub crop: usize,
    /// Condition encoding: raw, binary or unit-max.
    #[arg(long, default_value = "raw")]
    pub encoding: Encoding,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 32)]
    pub latent: usize,
    /// Weight of the KL term.
    #[arg(long, default_value_t = 1.0)]
    pub kl_weight: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct EvalCvaeArgs {
    /// Pair list of `condition.evf,target.pgm` lines.
    #[arg(long)]
    pub pairs: PathBuf,
    /// cVAE checkpoint to reconstruct with.
    #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Score existing `<target stem>.pgm` images from this directory instead.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Frame side length, when scoring predictions.
    #[arg(long, default_value_t = DEFAULT_CROP_SIDE)]
    pub crop: usize,
    /// Condition encoding: raw, binary or unit-max.
    #[arg(long, default_value = "raw")]
    pub encoding: Encoding,
    /// JSONL metric report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write reconstructions as PGM files here.
    #[arg(long)]
    pub out_frames: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Four rigid motions (left, right, up, down).
    FourMotion,
    /// One motion pattern per AU class.
    AllClasses,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::FourMotion)]
    pub preset: Preset,
    #[arg(long, default_value_t = 400)]
    pub clips: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sensor width; defaults to the preset's.
    #[arg(long)]
    pub width: Option<u16>,
    /// Sensor height; defaults to the preset's.
    #[arg(long)]
    pub height: Option<u16>,
    /// Clip duration in microseconds; defaults to the preset's.
    #[arg(long)]
    pub duration_us: Option<u64>,
    /// Events per unit of intensity change per pixel.
    #[arg(long)]
    pub event_rate: Option<f64>,
    /// Background events per pixel per second.
    #[arg(long)]
    pub noise_rate: Option<f64>,
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Slice duration for the paired frames, microseconds.
    #[arg(long, default_value_t = DEFAULT_SLICE_US)]
    pub slice_us: u64,
    /// Fraction of clips (the last ones) listed as reconstruction test pairs.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", Failure::validation(first));
            return ExitCode::from(1);
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("{}", Failure::runtime(e.to_string()));
            return ExitCode::from(2);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
