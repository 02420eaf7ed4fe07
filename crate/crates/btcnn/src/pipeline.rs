//! Wiring between the dataset, preprocessing, training, and evaluation
//! layers. Everything here is also exercised directly by the CLI.

use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::checkpoint::{self, Checkpoint, CheckpointError, CheckpointMeta};
use crate::dataset::{
    load_manifest, load_record, stratified_split, DatasetError, DatasetRecord, Label, Manifest,
    Partition, SplitAssignment,
};
use crate::evaluation::{
    aggregate_metrics, confusion_matrix, metrics_report, predict_batch, ComparisonCell,
    ConfusionMatrix, EvalError, MetricsReport,
};
use crate::preprocess::{preprocess, InputSize, PreprocessError, Variant, INPUT_SIZES, VARIANTS};
use crate::tensor::Tensor;
use crate::training::{train, TrainConfig, TrainError, TrainHistory};

pub const SPLIT_RATIOS: (f64, f64, f64) = (0.70, 0.15, 0.15);

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("comparison cell ({variant}, {size}) failed: {source}")]
    Cell {
        variant: Variant,
        size: usize,
        source: Box<PipelineError>,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Manifest plus every record loaded into memory.
pub struct LoadedDataset {
    pub manifest: Manifest,
    pub records: Vec<DatasetRecord>,
}

pub fn load_dataset(dir: &Path) -> Result<LoadedDataset, PipelineError> {
    let manifest = load_manifest(dir)?;
    let records: Vec<DatasetRecord> = manifest
        .entries()
        .par_iter()
        .map(|e| load_record(&manifest, e))
        .collect::<Result<_, _>>()?;
    Ok(LoadedDataset { manifest, records })
}

/// Preprocesses one partition into (input tensor, class index) pairs, in
/// manifest order.
pub fn prepare_partition(
    data: &LoadedDataset,
    split: &SplitAssignment,
    part: Partition,
    variant: Variant,
    size: InputSize,
) -> Result<Vec<(Tensor, usize)>, PipelineError> {
    let idx = split.indices(part);
    let prepared: Vec<(Tensor, usize)> = idx
        .par_iter()
        .map(|&i| {
            let rec = &data.records[i];
            preprocess(rec, variant, size).map(|t| (t, rec.label.index()))
        })
        .collect::<Result<_, _>>()?;
    Ok(prepared)
}

pub struct TrainOutcome {
    pub params: crate::model::ModelParams,
    pub history: TrainHistory,
    pub meta: CheckpointMeta,
}

/// Full training run against a dataset directory: split by `config.seed`,
/// preprocess per `config`, train, and bundle checkpoint metadata.
pub fn train_on_dataset(data: &LoadedDataset, config: &TrainConfig) -> Result<TrainOutcome, PipelineError> {
    let split = stratified_split(&data.manifest, SPLIT_RATIOS, config.seed)?;
    let train_set = prepare_partition(data, &split, Partition::Train, config.variant, config.input_size)?;
    let val_set = prepare_partition(data, &split, Partition::Validation, config.variant, config.input_size)?;
    let (params, history) = train(config, &train_set, &val_set)?;
    let meta = CheckpointMeta::for_params(&params, config.variant, config.seed);
    Ok(TrainOutcome { params, history, meta })
}

/// Evaluates a checkpoint on one partition, rebuilding the training-time
/// split from the seed stored in the checkpoint.
pub fn evaluate_checkpoint(
    data: &LoadedDataset,
    ck: &Checkpoint,
    part: Partition,
) -> Result<(ConfusionMatrix, MetricsReport), PipelineError> {
    let variant = ck.meta.variant()?;
    let size = InputSize::from_side(ck.meta.input_size).ok_or_else(|| {
        CheckpointError::MetadataMismatch(format!(
            "checkpoint input size {} is not one of 32/64/128",
            ck.meta.input_size
        ))
    })?;
    let split = stratified_split(&data.manifest, SPLIT_RATIOS, ck.meta.split_seed)?;
    let samples = prepare_partition(data, &split, part, variant, size)?;
    let inputs: Vec<Tensor> = samples.iter().map(|(t, _)| t.clone()).collect();
    let truths: Vec<Label> = samples
        .iter()
        .map(|&(_, target)| Label::from_index(target).expect("valid class index"))
        .collect();
    let preds = predict_batch(&ck.params, &inputs)?;
    let cm = confusion_matrix(&preds, &truths)?;
    let report = metrics_report(&cm)?;
    Ok((cm, report))
}

pub struct CompareCellOutcome {
    pub cell: ComparisonCell,
    pub report: MetricsReport,
    pub matrix: ConfusionMatrix,
}

/// Trains and evaluates one (variant, size) cell with shared settings.
pub fn run_cell(
    data: &LoadedDataset,
    variant: Variant,
    size: InputSize,
    seed: u64,
    iters: usize,
) -> Result<CompareCellOutcome, PipelineError> {
    let run = || -> Result<CompareCellOutcome, PipelineError> {
        let mut config = TrainConfig::new(variant, size, seed);
        config.max_iterations = iters;
        let outcome = train_on_dataset(data, &config)?;
        let ck = Checkpoint {
            meta: outcome.meta,
            params: outcome.params,
        };
        let (matrix, report) = evaluate_checkpoint(data, &ck, Partition::Test)?;
        let agg = aggregate_metrics(&matrix)?;
        Ok(CompareCellOutcome {
            cell: ComparisonCell {
                variant,
                size,
                accuracy: agg.overall_accuracy,
                metrics: Some(agg),
            },
            report,
            matrix,
        })
    };
    run().map_err(|e| PipelineError::Cell {
        variant,
        size: size.side(),
        source: Box::new(e),
    })
}

/// All nine comparison cells in report order (cropped, uncropped, segmented
/// by 32, 64, 128), sharing one seed.
pub fn run_compare(
    data: &LoadedDataset,
    seed: u64,
    iters: usize,
    mut on_cell: impl FnMut(&CompareCellOutcome),
) -> Result<Vec<CompareCellOutcome>, PipelineError> {
    let mut outcomes = Vec::with_capacity(9);
    for &variant in &VARIANTS {
        for &size in &INPUT_SIZES {
            let outcome = run_cell(data, variant, size, seed, iters)?;
            on_cell(&outcome);
            outcomes.push(outcome);
        }
    }
    Ok(outcomes)
}

pub fn save_outputs(
    ckpt_path: &Path,
    history_path: &Path,
    outcome: &TrainOutcome,
) -> Result<(), PipelineError> {
    checkpoint::save_checkpoint(ckpt_path, &outcome.params, &outcome.meta)?;
    if let Err(e) = std::fs::write(history_path, outcome.history.to_csv()) {
        // do not leave a half-written pair behind
        let _ = std::fs::remove_file(ckpt_path);
        return Err(PipelineError::Io(e));
    }
    Ok(())
}
