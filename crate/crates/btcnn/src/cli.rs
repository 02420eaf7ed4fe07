//! Command-line entry points: `synth`, `train`, `eval`, `compare`.
//!
//! Exit codes: 0 on success, 1 on any dataset/config/runtime error, 2 for
//! malformed flags (clap's parser handles those before we run).

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::checkpoint::load_checkpoint;
use crate::dataset::Partition;
use crate::evaluation::render_comparison;
use crate::pipeline::{
    evaluate_checkpoint, load_dataset, run_compare, save_outputs, train_on_dataset, PipelineError,
};
use crate::preprocess::{InputSize, Variant};
use crate::synth::{write_dataset, SynthSpec};
use crate::training::TrainConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    BadValue(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Parser)]
#[command(
    name = "btcnn",
    version,
    about = "Brain-tumor image grading: train and evaluate a small CNN over uncropped, cropped, and segmented lesion inputs at sizes 32/64/128"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset (index.csv + PGM images/masks)
    Synth {
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
        /// Records per class
        #[arg(long = "per-class", default_value_t = 10)]
        per_class: usize,
        /// Generated image side in pixels
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train a model on a dataset directory and write checkpoint + history
    Train {
        /// Dataset directory containing index.csv
        #[arg(long)]
        data: PathBuf,
        /// Input variant: uncropped, cropped, or segmented
        #[arg(long, default_value = "cropped")]
        variant: String,
        /// Input side: 32, 64, or 128
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Training iterations (minibatch steps)
        #[arg(long, default_value_t = 1600)]
        iters: usize,
        /// Minibatch size
        #[arg(long, default_value_t = 64)]
        batch: usize,
        /// ADAM learning rate
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Seed for split, init, and batch order
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Checkpoint output path
        #[arg(long)]
        out: PathBuf,
        /// Training-history CSV output path
        #[arg(long)]
        history: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset partition
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path
        #[arg(long)]
        model: PathBuf,
        /// Partition: train, validation, or test
        #[arg(long, default_value = "test")]
        split: String,
        /// Metrics JSON output path
        #[arg(long)]
        report: Option<PathBuf>,
        /// Confusion-matrix CSV output path
        #[arg(long)]
        cm: Option<PathBuf>,
        /// Cross-check: fail if the checkpoint was trained on another variant
        #[arg(long)]
        variant: Option<String>,
        /// Cross-check: fail if the checkpoint was trained at another size
        #[arg(long)]
        size: Option<usize>,
    },
    /// Train and evaluate all nine (variant, size) cells and write the
    /// comparison table
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Training iterations per cell
        #[arg(long, default_value_t = 1600)]
        iters: usize,
        /// Report output path; per-cell metrics JSONs are written next to it
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_variant(s: &str) -> Result<Variant, CliError> {
    Variant::parse(s).ok_or_else(|| {
        CliError::BadValue(format!(
            "invalid --variant {s:?}: valid variants are {{uncropped, cropped, segmented}}"
        ))
    })
}

fn parse_size(side: usize) -> Result<InputSize, CliError> {
    InputSize::from_side(side).ok_or_else(|| {
        CliError::BadValue(format!(
            "invalid --size {side}: valid sizes are {{32, 64, 128}}"
        ))
    })
}

fn parse_split(s: &str) -> Result<Partition, CliError> {
    Partition::parse(s).ok_or_else(|| {
        CliError::BadValue(format!(
            "invalid --split {s:?}: valid partitions are {{train, validation, test}}"
        ))
    })
}

fn cell_json_path(report_path: &Path, variant: Variant, side: usize) -> PathBuf {
    let stem = report_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("compare");
    let name = format!("{stem}_{variant}_{side}.metrics.json");
    report_path.with_file_name(name)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { out, per_class, size, seed } => {
            if per_class == 0 {
                return Err(CliError::BadValue("--per-class must be >= 1".into()));
            }
            if size < 24 {
                return Err(CliError::BadValue(format!(
                    "invalid --size {size}: synthetic images need side >= 24"
                )));
            }
            let spec = SynthSpec { per_class, side: size, seed };
            write_dataset(&out, &spec).map_err(PipelineError::from)?;
            println!(
                "synth: wrote {} records ({per_class} per class, side {size}, seed {seed}) to {}",
                3 * per_class,
                out.display()
            );
            Ok(())
        }
        Command::Train {
            data,
            variant,
            size,
            iters,
            batch,
            lr,
            seed,
            out,
            history,
        } => {
            let variant = parse_variant(&variant)?;
            let input_size = parse_size(size)?;
            let mut config = TrainConfig::new(variant, input_size, seed);
            config.max_iterations = iters;
            config.batch_size = batch;
            config.learning_rate = lr;
            println!(
                "train: data={} variant={} size={} batch={} lr={} iters={} seed={}",
                data.display(),
                variant,
                input_size.side(),
                config.batch_size,
                config.learning_rate,
                config.max_iterations,
                seed
            );
            let dataset = load_dataset(&data)?;
            let outcome = train_on_dataset(&dataset, &config)?;
            save_outputs(&out, &history, &outcome)?;
            if let Some(last) = outcome.history.rows.last() {
                println!(
                    "train: done at iteration {} (epoch {}): train_acc={:.4} val_acc={:.4}",
                    last.iteration, last.epoch, last.train_accuracy, last.val_accuracy
                );
            }
            println!(
                "train: checkpoint={} history={}",
                out.display(),
                history.display()
            );
            Ok(())
        }
        Command::Eval {
            data,
            model,
            split,
            report,
            cm,
            variant,
            size,
        } => {
            let part = parse_split(&split)?;
            let ck = load_checkpoint(&model).map_err(PipelineError::from)?;
            if let Some(v) = variant {
                let v = parse_variant(&v)?;
                if v.name() != ck.meta.variant {
                    return Err(PipelineError::from(
                        crate::checkpoint::CheckpointError::MetadataMismatch(format!(
                            "checkpoint was trained on variant {}, --variant asked for {v}",
                            ck.meta.variant
                        )),
                    )
                    .into());
                }
            }
            if let Some(s) = size {
                if s != ck.meta.input_size {
                    return Err(PipelineError::from(
                        crate::checkpoint::CheckpointError::MetadataMismatch(format!(
                            "checkpoint was trained at size {}, --size asked for {s}",
                            ck.meta.input_size
                        )),
                    )
                    .into());
                }
            }
            let dataset = load_dataset(&data)?;
            let (matrix, metrics) = evaluate_checkpoint(&dataset, &ck, part)?;
            println!(
                "eval: split={} samples={} overall_accuracy={:.4}",
                part.name(),
                matrix.total(),
                metrics.overall_accuracy
            );
            if let Some(path) = report {
                std::fs::write(&path, crate::evaluation::metrics_report_json(&metrics))?;
                println!("eval: report={}", path.display());
            }
            if let Some(path) = cm {
                std::fs::write(&path, matrix.to_csv())?;
                println!("eval: cm={}", path.display());
            }
            Ok(())
        }
        Command::Compare { data, seed, iters, out } => {
            println!(
                "compare: data={} seed={seed} iters={iters} (batch=64 lr=0.001)",
                data.display()
            );
            let dataset = load_dataset(&data)?;
            let outcomes = run_compare(&dataset, seed, iters, |outcome| {
                println!(
                    "compare: cell ({}, {}) test_accuracy={:.4}",
                    outcome.cell.variant,
                    outcome.cell.size.side(),
                    outcome.cell.accuracy
                );
            })?;
            for outcome in &outcomes {
                let path = cell_json_path(&out, outcome.cell.variant, outcome.cell.size.side());
                std::fs::write(&path, crate::evaluation::metrics_report_json(&outcome.report))?;
            }
            let cells: Vec<_> = outcomes.iter().map(|o| o.cell.clone()).collect();
            let table = render_comparison(&cells).map_err(PipelineError::from)?;
            std::fs::write(&out, &table)?;
            println!("compare: report={}", out.display());
            print!("{table}");
            Ok(())
        }
    }
}

/// Parses argv and runs; the process exit code is 0/1/2 per the contract
/// above.
pub fn main_entry() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}
