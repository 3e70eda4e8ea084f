use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use freqselect::pipeline;
use freqselect::{Error, ErrorKind, MaskMode};

#[derive(Parser)]
#[command(name = "freqselect", version, about = "Learned frequency-band gating experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Partition,
    Strict,
}

impl From<Mode> for MaskMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Partition => MaskMode::PartitionComplete,
            Mode::Strict => MaskMode::PaperStrict,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic image/voxel dataset.
    SynthData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split an image into radial frequency bands.
    Decompose {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        bands: usize,
        #[arg(long = "nu-max")]
        nu_max: f64,
        #[arg(long, value_enum, default_value = "partition")]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the gate and the voxel-to-latent ridge decoder.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict latents from voxel rows.
    Infer {
        #[arg(long)]
        gate: PathBuf,
        #[arg(long)]
        ridge: PathBuf,
        #[arg(long)]
        voxels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score reconstruction/reference image pairs.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-band pass-through rates as CSV.
    ExportWeights {
        #[arg(long)]
        gate: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(command: Command) -> freqselect::Result<()> {
    match command {
        Command::SynthData { config, out } => pipeline::synth_data(&config, &out).map(drop),
        Command::Decompose {
            image,
            bands,
            nu_max,
            mode,
            out,
        } => pipeline::decompose(&image, bands, nu_max, mode.into(), &out).map(drop),
        Command::Train { config, out } => pipeline::train(&config, &out).map(drop),
        Command::Infer {
            gate,
            ridge,
            voxels,
            out,
        } => pipeline::infer(&gate, &ridge, &voxels, &out).map(drop),
        Command::Evaluate { manifest, out } => pipeline::evaluate(&manifest, &out).map(drop),
        Command::ExportWeights { gate, out } => pipeline::export_weights(&gate, &out).map(drop),
    }
}

fn one_line(e: &Error) -> String {
    e.to_string().replace(['\n', '\r'], " ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&msg);
            eprintln!("error: kind=validation message={}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = match e.kind() {
                ErrorKind::Validation => ("validation", 1),
                ErrorKind::Numerical => ("numerical", 2),
            };
            eprintln!("error: kind={kind} message={}", one_line(&e));
            ExitCode::from(code)
        }
    }
}
