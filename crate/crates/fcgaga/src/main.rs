use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use fcgaga::checkpoint;
use fcgaga::config::RunConfig;
use fcgaga::export;
use fcgaga::manifest::write_manifest;
use fcgaga::panel_io;
use fcgaga::trainer;

use fcgaga_core::data;
use fcgaga_core::synth::{self, SynthConfig};

/// Exit codes: 0 success, 2 missing file, 3 config violation,
/// 4 checkpoint/config mismatch, 1 anything else.
const EXIT_MISSING_FILE: u8 = 2;
const EXIT_BAD_CONFIG: u8 = 3;
const EXIT_CHECKPOINT_MISMATCH: u8 = 4;

#[derive(Parser)]
#[command(name = "fcgaga", about = "Spatio-temporal traffic forecasting toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Deterministic-mode override.
    #[arg(long)]
    deterministic: Option<bool>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic panel with a planted coupling graph.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8)]
        nodes: usize,
        #[arg(long, default_value_t = 2880)]
        steps: usize,
        #[arg(long, default_value_t = 2)]
        neighbors: usize,
    },
    /// Train a model and keep the best-validation checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train the gate-variant matrix and consolidate the results.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated gate variants.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        /// Seeds per variant.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// Export gate weights, neighbor rankings and a forecast
    /// decomposition from a checkpoint.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(err: anyhow::Error) -> Self {
        let code = if err
            .chain()
            .filter_map(|c| c.downcast_ref::<std::io::Error>())
            .any(|io| io.kind() == std::io::ErrorKind::NotFound)
        {
            EXIT_MISSING_FILE
        } else {
            1
        };
        CliError::new(code, format!("{err:#}"))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut run = match &common.config {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::new(
                    EXIT_MISSING_FILE,
                    format!("config not found: {}", path.display()),
                ));
            }
            RunConfig::load(path)
                .map_err(|e| CliError::new(EXIT_BAD_CONFIG, format!("{e:#}")))?
        }
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        run.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        run.seed = seed;
    }
    if let Some(d) = common.deterministic {
        run.deterministic = d;
    }
    run.validate()
        .map_err(|e| CliError::new(EXIT_BAD_CONFIG, format!("{e:#}")))?;
    Ok(run)
}

fn load_panel(run: &RunConfig) -> Result<fcgaga_core::data::SpeedPanel, CliError> {
    if !run.dataset.exists() {
        return Err(CliError::new(
            EXIT_MISSING_FILE,
            format!("dataset not found: {}", run.dataset.display()),
        ));
    }
    panel_io::load_panel(&run.dataset, &run.dataset_format).map_err(CliError::from)
}

fn load_checkpoint_for(
    run: &RunConfig,
    panel: &fcgaga_core::data::SpeedPanel,
    path: &Path,
) -> Result<checkpoint::Checkpoint, CliError> {
    if !path.exists() {
        return Err(CliError::new(
            EXIT_MISSING_FILE,
            format!("checkpoint not found: {}", path.display()),
        ));
    }
    let ckpt = checkpoint::load(path).map_err(CliError::from)?;
    let expected = run
        .model_config(panel.num_nodes())
        .map_err(|e| CliError::new(EXIT_BAD_CONFIG, format!("{e:#}")))?;
    if ckpt.config != expected {
        return Err(CliError::new(
            EXIT_CHECKPOINT_MISMATCH,
            format!(
                "checkpoint was trained with a different configuration \
                 ({} nodes, gate {}) than the run config requests",
                ckpt.config.nodes,
                ckpt.config.gate_variant.name()
            ),
        ));
    }
    Ok(ckpt)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth {
            common,
            nodes,
            steps,
            neighbors,
        } => {
            let run = load_config(&common)?;
            let cfg = SynthConfig {
                nodes,
                steps,
                neighbors_per_node: neighbors,
                seed: run.seed,
                ..Default::default()
            };
            let (panel, adj) = synth::generate(&cfg)
                .map_err(|e| CliError::new(EXIT_BAD_CONFIG, format!("{e}")))?;
            std::fs::create_dir_all(&run.output_dir)
                .context("creating output directory")
                .map_err(CliError::from)?;
            let panel_path = run.output_dir.join("panel.csv");
            let adj_path = run.output_dir.join("adjacency.csv");
            panel_io::save_panel_csv(&panel, &panel_path).map_err(CliError::from)?;
            panel_io::save_adjacency_csv(&adj, panel.node_ids(), &adj_path)
                .map_err(CliError::from)?;
            write_manifest(
                "synth",
                &run,
                &[panel_path, adj_path],
                &run.output_dir,
            )
            .map_err(CliError::from)?;
            println!("wrote {} steps x {} nodes", steps, nodes);
            Ok(())
        }
        Command::Train { common } => {
            let run = load_config(&common)?;
            let panel = load_panel(&run)?;
            let summary =
                trainer::train(&run, &panel, &run.output_dir).map_err(CliError::from)?;
            let artifacts = vec![
                run.output_dir.join("best.ckpt"),
                run.output_dir.join("last.ckpt"),
                run.output_dir.join("train_log.jsonl"),
            ];
            write_manifest("train", &run, &artifacts, &run.output_dir)
                .map_err(CliError::from)?;
            println!(
                "trained {} steps; best val mean MAE {:.4} at epoch {}",
                summary.optimizer_steps, summary.best_val_mean_mae, summary.best_epoch
            );
            Ok(())
        }
        Command::Eval { common, checkpoint } => {
            let run = load_config(&common)?;
            let panel = load_panel(&run)?;
            let ckpt = load_checkpoint_for(&run, &panel, &checkpoint)?;
            let splits = data::split(
                &panel,
                &run.split_spec(),
                ckpt.config.history,
                ckpt.config.horizon,
            )
            .map_err(|e| CliError::new(EXIT_BAD_CONFIG, format!("{e}")))?;
            let report = trainer::evaluate(&ckpt.params, &ckpt.config, &panel, splits.test)
                .map_err(CliError::from)?;
            std::fs::create_dir_all(&run.output_dir)
                .context("creating output directory")
                .map_err(CliError::from)?;
            let metrics_path = run.output_dir.join("metrics.csv");
            export::export_metrics(&report, &metrics_path).map_err(CliError::from)?;
            write_manifest("eval", &run, &[metrics_path], &run.output_dir)
                .map_err(CliError::from)?;
            for h in &report.horizons {
                println!(
                    "{:>3} min  mae {:.4}  mape {:.2}%  rmse {:.4}  ({} samples)",
                    h.minutes, h.mae, h.mape_pct, h.rmse, h.count
                );
            }
            Ok(())
        }
        Command::Ablate {
            common,
            variants,
            seeds,
        } => {
            let run = load_config(&common)?;
            if variants.is_empty() {
                return Err(CliError::new(EXIT_BAD_CONFIG, "no variants given"));
            }
            let panel = load_panel(&run)?;
            std::fs::create_dir_all(&run.output_dir)
                .context("creating output directory")
                .map_err(CliError::from)?;
            let mut rows =
                String::from("variant,seed,horizon_minutes,mae,mape_pct,rmse,count\n");
            for variant in &variants {
                for s in 0..seeds {
                    let mut vrun = run.clone();
                    vrun.gate_variant = variant.clone();
                    vrun.seed = run.seed + s;
                    vrun.validate()
                        .map_err(|e| CliError::new(EXIT_BAD_CONFIG, format!("{e:#}")))?;
                    let sub = run.output_dir.join(format!("{variant}_seed{}", vrun.seed));
                    trainer::train(&vrun, &panel, &sub).map_err(CliError::from)?;
                    let ckpt =
                        checkpoint::load(&sub.join("best.ckpt")).map_err(CliError::from)?;
                    let splits = data::split(
                        &panel,
                        &vrun.split_spec(),
                        ckpt.config.history,
                        ckpt.config.horizon,
                    )
                    .map_err(|e| CliError::new(EXIT_BAD_CONFIG, format!("{e}")))?;
                    let report =
                        trainer::evaluate(&ckpt.params, &ckpt.config, &panel, splits.test)
                            .map_err(CliError::from)?;
                    for h in &report.horizons {
                        rows.push_str(&format!(
                            "{variant},{},{},{},{},{},{}\n",
                            vrun.seed, h.minutes, h.mae, h.mape_pct, h.rmse, h.count
                        ));
                    }
                }
            }
            let path = run.output_dir.join("ablation.csv");
            std::fs::write(&path, &rows)
                .context("writing ablation report")
                .map_err(CliError::from)?;
            write_manifest("ablate", &run, &[path], &run.output_dir)
                .map_err(CliError::from)?;
            println!("ablation over {} variants x {seeds} seeds done", variants.len());
            Ok(())
        }
        Command::Export { common, checkpoint } => {
            let run = load_config(&common)?;
            let panel = load_panel(&run)?;
            let ckpt = load_checkpoint_for(&run, &panel, &checkpoint)?;
            std::fs::create_dir_all(&run.output_dir)
                .context("creating output directory")
                .map_err(CliError::from)?;
            let mut artifacts = Vec::new();
            artifacts.extend(
                export::export_weights(&ckpt, panel.node_ids(), &run.output_dir)
                    .map_err(CliError::from)?,
            );
            artifacts.extend(
                export::export_rankings(&ckpt, panel.node_ids(), &run.output_dir)
                    .map_err(CliError::from)?,
            );
            let splits = data::split(
                &panel,
                &run.split_spec(),
                ckpt.config.history,
                ckpt.config.horizon,
            )
            .map_err(|e| CliError::new(EXIT_BAD_CONFIG, format!("{e}")))?;
            let batches = data::eval_batches(
                &panel,
                splits.test,
                ckpt.config.history,
                ckpt.config.horizon,
                &ckpt.config.time_features,
                1,
            )
            .map_err(|e| CliError::new(EXIT_BAD_CONFIG, format!("{e}")))?;
            artifacts.push(
                export::export_decomposition(
                    &ckpt,
                    &batches[0],
                    panel.node_ids(),
                    &run.output_dir,
                )
                .map_err(CliError::from)?,
            );
            write_manifest("export", &run, &artifacts, &run.output_dir)
                .map_err(CliError::from)?;
            println!("exported {} artifacts", artifacts.len());
            Ok(())
        }
    }
}
