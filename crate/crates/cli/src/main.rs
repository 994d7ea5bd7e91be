use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use focalholo::bench::Scenario;
use focalholo::holo_opt::Variant;

mod commands;
mod settings;

/// Focal-surface holography toolkit.
#[derive(Debug, Parser)]
#[command(name = "focalholo", version)]
struct Cli {
    /// Plain-text key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Propagate a phase hologram by one distance.
    Propagate {
        #[arg(long)]
        hologram: PathBuf,
        #[arg(long)]
        distance_mm: f64,
        /// Also write the three transfer functions as kernel files.
        #[arg(long)]
        save_kernels: bool,
    },
    /// Reconstruct every volume plane of a hologram.
    ReconstructVolume {
        #[arg(long)]
        hologram: PathBuf,
    },
    /// Optimize a phase-only hologram for an RGB-D scene.
    Optimize {
        #[arg(long, default_value = "multiplane")]
        variant: Variant,
        /// RGB target (PNG); a synthetic scene is used when omitted.
        #[arg(long)]
        rgb: Option<PathBuf>,
        /// Normalized depth (1-channel PFM).
        #[arg(long)]
        depth: Option<PathBuf>,
        /// Model checkpoint, required by the focal_surface variant.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Generate a focal-surface training set.
    GenDataset {
        /// Directory of name.png + name.pfm RGB-D pairs.
        #[arg(long)]
        input_dir: Option<PathBuf>,
        /// Number of procedural scenes to use instead.
        #[arg(long)]
        synthetic: Option<usize>,
    },
    /// Train the focal-surface transport model.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        distance_mm: f64,
        /// Checkpoint to resume from.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Score a model against a dataset (PSNR, SSIM, loss).
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        distance_mm: f64,
    },
    /// Count forward operations and time a scenario.
    Bench {
        /// simulate-volume | optimize-multiplane | optimize-focal
        #[arg(long)]
        scenario: Scenario,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ctx = commands::Ctx {
        settings: settings::Settings::load(cli.config.as_deref(), cli.seed)?,
        out_dir: cli.out_dir,
    };
    match cli.command {
        Command::Propagate {
            hologram,
            distance_mm,
            save_kernels,
        } => commands::propagate_cmd(&ctx, &hologram, distance_mm, save_kernels),
        Command::ReconstructVolume { hologram } => commands::reconstruct_volume_cmd(&ctx, &hologram),
        Command::Optimize {
            variant,
            rgb,
            depth,
            model,
        } => commands::optimize_cmd(&ctx, variant, rgb.as_deref(), depth.as_deref(), model.as_deref()),
        Command::GenDataset { input_dir, synthetic } => commands::gen_dataset_cmd(&ctx, input_dir.as_deref(), synthetic),
        Command::Train {
            dataset,
            distance_mm,
            init,
        } => commands::train_cmd(&ctx, &dataset, distance_mm, init.as_deref()),
        Command::Eval {
            dataset,
            model,
            distance_mm,
        } => commands::eval_cmd(&ctx, &dataset, &model, distance_mm),
        Command::Bench { scenario, model } => commands::bench_cmd(&ctx, scenario, model.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
