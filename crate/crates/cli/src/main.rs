mod commands;
mod files;
mod overlay;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use roadgrid_core::PipelineConfig;

/// Grid-level lane and road-marking post-processing and evaluation.
#[derive(Debug, Parser)]
#[command(name = "roadgrid", version)]
struct Cli {
    /// TOML or JSON configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for frame-level parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode annotation JSON files into grid masks and quadrant masks.
    Encode {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write horizontally flipped copies.
        #[arg(long)]
        flip: bool,
    },
    /// Decode the vanishing point from a tensor file.
    DecodeVp { tensor: PathBuf },
    /// Extract VP, lanes and road markings from a tensor file or a directory of them.
    Postprocess {
        input: PathBuf,
        /// Output JSON file (or directory for directory input); stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Render detections to a PNG (single-file input only).
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
    /// Score predictions against annotations.
    Evaluate {
        pred_dir: PathBuf,
        gt_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render synthetic scenes with exact ground truth.
    Synth {
        /// Scene description JSON; the built-in two-lane scene when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run post-processing on every frame and write a score report.
        #[arg(long)]
        eval: bool,
    },
    /// Receptive fields and output stride of a layer table.
    Netspec {
        /// Layer table JSON; the bundled backbone when omitted.
        #[arg(long)]
        layers: Option<PathBuf>,
        /// Fail when computed and declared values disagree.
        #[arg(long)]
        strict: bool,
    },
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => {
            files::require_file(path)?;
            PipelineConfig::load(path)?
        }
        None => PipelineConfig::default(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build()?;
    pool.install(|| match cli.command {
        Command::Encode { dir, out, flip } => commands::encode(&dir, &out, flip, &cfg),
        Command::DecodeVp { tensor } => commands::decode_vp(&tensor, &cfg),
        Command::Postprocess { input, out, overlay } => {
            commands::postprocess(&input, out.as_deref(), overlay.as_deref(), &cfg)
        }
        Command::Evaluate {
            pred_dir,
            gt_dir,
            out,
        } => commands::evaluate(&pred_dir, &gt_dir, &out, &cfg),
        Command::Synth {
            spec,
            out,
            count,
            seed,
            eval,
        } => commands::synth(spec.as_deref(), &out, count, seed, eval, &cfg),
        Command::Netspec { layers, strict } => commands::netspec(layers.as_deref(), strict),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
