//! `spmk` — the pipeline driver.
//!
//! Subcommands: `make-mini-model`, `gen-data`, `train`, `eval`, `fuse-sim`,
//! `isocenter`, `grad-check`. Every run resolves one config (file plus
//! `--set key=value` overrides plus the `SPMK_OUT_ROOT` env var) and prints
//! its hash; artifacts carry the hash for lineage.
//!
//! Exit codes: 0 success, 2 configuration errors, 3 data-format errors,
//! 4 numeric aborts, 5 I/O failures.

mod commands;
mod errors;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use errors::CliError;

#[derive(Parser)]
#[command(name = "spmk", version, about = "Synthetic patient-modeling pipeline")]
struct Cli {
    /// Pipeline config file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config overrides, `dotted.key=value`; repeatable, applied in order.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the procedural desk-scale body model and write it to a file.
    MakeMiniModel {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Output model file; defaults to <output_dir>/mini_model.toml.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic training dataset into shard files.
    GenData {
        #[arg(long)]
        count: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output dataset directory; defaults to <output_dir>/dataset.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker thread count (0 = all cores). Output bytes do not depend
        /// on this.
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Train the mesh regressor on a generated dataset.
    Train {
        /// Dataset manifest; defaults to <output_dir>/dataset/manifest.toml.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        threads: Option<usize>,
        /// Skip per-record consistency validation while loading.
        #[arg(long)]
        no_validate: bool,
        /// Checkpoint path; defaults to <output_dir>/regressor.ckpt.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Loss curve CSV; defaults to <output_dir>/loss_curve.csv.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Evaluate a checkpoint (or ground-truth passthrough) on a dataset.
    Eval {
        #[arg(long, required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Use the stored ground-truth parameters as the prediction.
        #[arg(long)]
        oracle: bool,
        /// Metrics CSV; defaults to <output_dir>/eval.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate two detection branches, train the fusion classifier, and
    /// report single-branch vs fused accuracy.
    FuseSim {
        #[arg(long)]
        frames: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Report file; defaults to <output_dir>/fusion_report.toml.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full isocentering inference: heatmaps → parameters → mesh →
    /// thickness → table displacement.
    Isocenter {
        #[arg(long, required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Heatmap input: a shard file of records to process.
        #[arg(long)]
        input: PathBuf,
        /// Calibration file; identity calibration when omitted.
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        region: Option<String>,
        /// Use the stored ground-truth parameters instead of the network.
        #[arg(long)]
        oracle: bool,
    },
    /// Verify analytic gradients against central finite differences.
    GradCheck {
        #[arg(long, default_value_t = 3)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        samples_per_layer: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let env_root = std::env::var("SPMK_OUT_ROOT").ok();
    let result: Result<(), CliError> = (|| {
        let config = spmk_core::config::PipelineConfig::resolve(
            cli.config.as_deref(),
            &cli.overrides,
            env_root.as_deref(),
        )?;
        match cli.command {
            Command::MakeMiniModel { seed, out } => commands::make_mini_model(&config, seed, out),
            Command::GenData {
                count,
                seed,
                out,
                workers,
            } => commands::gen_data(&config, count, seed, out, workers),
            Command::Train {
                data,
                epochs,
                lr,
                threads,
                no_validate,
                out,
                curve,
            } => commands::train(&config, data, epochs, lr, threads, no_validate, out, curve),
            Command::Eval {
                checkpoint,
                data,
                oracle,
                out,
            } => commands::eval(&config, checkpoint, data, oracle, out),
            Command::FuseSim { frames, seed, out } => {
                commands::fuse_sim(&config, frames, seed, out)
            }
            Command::Isocenter {
                checkpoint,
                input,
                calibration,
                region,
                oracle,
            } => commands::isocenter(&config, checkpoint, input, calibration, region, oracle),
            Command::GradCheck {
                seed,
                samples_per_layer,
                tolerance,
            } => commands::grad_check(&config, seed, samples_per_layer, tolerance),
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
