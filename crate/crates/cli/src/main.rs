use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use nilm_core::manifest::ExperimentManifest;
use nilm_core::model::ModelConfig;
use nilm_core::pipeline::{self, InspectReport, PipelineError};

/// Load disaggregation with a multi-scale dilated residual network.
#[derive(Debug, Parser)]
#[command(name = "nilm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment manifest (TOML).
    #[arg(long)]
    manifest: PathBuf,
    /// Overrides the manifest's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Upper bound on worker threads.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Overrides the manifest's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest, resample and sample windows into train and test shards.
    Prepare(Common),
    /// Train one model per appliance from its train shard.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        appliance: Option<String>,
    },
    /// Score checkpoints on the test shards and write reports.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to score instead of models/{appliance}.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        appliance: Option<String>,
    },
    /// Print layer shapes, receptive fields and parameter count.
    Inspect {
        /// Checkpoint file; without it the manifest's (or the default)
        /// model config is initialized and summarized.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Write the synthetic scenario's houses as CSV plus a manifest that
    /// reads them.
    Synth(Common),
}

fn load(common: &Common) -> Result<ExperimentManifest> {
    let mut m = ExperimentManifest::load(&common.manifest).map_err(PipelineError::from)?;
    if let Some(seed) = common.seed {
        m.seed = seed;
    }
    if let Some(out) = &common.out {
        m.output_dir = out.clone();
    }
    Ok(m)
}

fn warn(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(common) => {
            let m = load(&common)?;
            let summary = pipeline::prepare(&m, common.workers)?;
            print!("{}", summary.to_table());
            println!("wrote {}", m.output_dir.join("summary.toml").display());
        }
        Command::Train { common, appliance } => {
            let m = load(&common)?;
            for t in pipeline::train(&m, common.workers, appliance.as_deref())? {
                warn(&t.warnings);
                let best = t.best_val_loss.map(|v| format!(", best val loss {v:.6}")).unwrap_or_default();
                println!(
                    "{}: {} pairs, {} epochs{best}{} -> {}",
                    t.appliance,
                    t.pairs,
                    t.epochs_run,
                    if t.stopped_early { " (stopped early)" } else { "" },
                    t.checkpoint.display()
                );
            }
        }
        Command::Evaluate {
            common,
            checkpoint,
            appliance,
        } => {
            let m = load(&common)?;
            let out = pipeline::evaluate(&m, common.workers, checkpoint.as_deref(), appliance.as_deref())?;
            warn(&out.warnings);
            print!("{}", nilm_core::eval::EvalReport::to_table(&out.reports));
        }
        Command::Inspect { checkpoint, manifest } => {
            let report = match (&checkpoint, &manifest) {
                (Some(path), _) => pipeline::inspect(path)?,
                (None, Some(path)) => {
                    let m = ExperimentManifest::load(path).map_err(PipelineError::from)?;
                    InspectReport::from_config(&m.model)?
                }
                (None, None) => InspectReport::from_config(&ModelConfig::default())?,
            };
            print!("{}", report.to_text());
        }
        Command::Synth(common) => {
            let m = load(&common)?;
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("synthetic"));
            let path = pipeline::synth(&m, &out)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<PipelineError>())
        .map(|e| e.exit_code() as u8)
        .unwrap_or(2)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
