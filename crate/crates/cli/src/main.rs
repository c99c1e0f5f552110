//! `rinv`: generate synthetic scenes, simulate radar heatmaps, train the
//! diffusion prior, enhance heatmaps back into point clouds, and evaluate the
//! results.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O or format error,
//! 4 numerical failure.

mod commands;
mod config;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rinv_core::error::Error;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "rinv", about = "Radar BEV point enhancement pipeline", version)]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (falls back to RINV_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic ground-truth scenes plus a seed manifest.
    GenScenes {
        #[arg(short = 'n', long, default_value_t = 16)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a scene through the radar forward model to a magnitude heatmap.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Antenna preset override: 1t4r, 3t4r, cascade, ideal12t16r.
        #[arg(long)]
        array: Option<String>,
        /// Also write the raw complex measurement.
        #[arg(long)]
        complex_out: Option<PathBuf>,
    },
    /// Train the diffusion prior on a directory of scenes.
    Train {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss trace CSV (defaults next to the checkpoint).
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Enhance a heatmap into a mask and point cloud.
    Enhance {
        #[arg(long)]
        heatmap: PathBuf,
        /// posterior, l1, l2, or cfar.
        #[arg(long)]
        method: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out_mask: PathBuf,
        #[arg(long)]
        out_points: PathBuf,
    },
    /// Score predicted points against ground truth, appending a CSV row.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Frame label (defaults to the prediction file stem).
        #[arg(long)]
        frame: Option<String>,
    },
    /// Hyperparameter sweep over (zeta, K, gamma).
    Sweep {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.0001,0.001,0.01")]
        zetas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
        ks: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1.0")]
        gammas: Vec<f64>,
    },
    /// Repeated-inference variance study on one scene.
    Variance {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5)]
        n_seeds: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a grid file to an 8-bit PGM image.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// gray or log.
        #[arg(long, default_value = "gray")]
        mode: String,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::GridMismatch { .. } | Error::Invalid(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
        Error::Numerical(_) | Error::EmptyPointSet(_) => 4,
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig, Error> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            RunConfig::from_json(&text)
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let threads = cli.threads.or_else(|| {
        std::env::var("RINV_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        // Ignore failure: the pool may already be initialized in tests.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = load_config(cli.config.as_ref())?;
    let seed = cli.seed;
    match &cli.command {
        Command::GenScenes { count, out } => commands::cmd_gen_scenes(&cfg, *count, out, seed),
        Command::Simulate {
            scene,
            out,
            array,
            complex_out,
        } => commands::cmd_simulate(
            &cfg,
            scene,
            out,
            array.as_deref(),
            complex_out.as_deref(),
            seed,
        ),
        Command::Train {
            scenes,
            out,
            loss_csv,
        } => commands::cmd_train(&cfg, scenes, out, loss_csv.as_deref(), seed),
        Command::Enhance {
            heatmap,
            method,
            checkpoint,
            out_mask,
            out_points,
        } => commands::cmd_enhance(
            &cfg,
            heatmap,
            method,
            checkpoint.as_deref(),
            out_mask,
            out_points,
            seed,
        ),
        Command::Eval {
            pred,
            gt,
            out,
            frame,
        } => commands::cmd_eval(pred, gt, out, frame.as_deref()),
        Command::Sweep {
            scenes,
            checkpoint,
            out,
            zetas,
            ks,
            gammas,
        } => commands::cmd_sweep(&cfg, scenes, checkpoint, out, zetas, ks, gammas, seed),
        Command::Variance {
            scene,
            checkpoint,
            n_seeds,
            out,
        } => commands::cmd_variance(&cfg, scene, checkpoint, *n_seeds, out, seed),
        Command::Render { input, out, mode } => commands::cmd_render(input, out, mode),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
