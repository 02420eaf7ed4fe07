//! Confusion-matrix construction, per-class one-vs-rest metrics, macro
//! aggregation, and the comparison-grid report.
//!
//! Matrix convention (fixed everywhere, asserted in the CSV comment line):
//! rows = predicted class, columns = actual class, order glioma, meningioma,
//! pituitary. Macro metrics are unweighted means of the three per-class
//! values; overall accuracy is trace/total.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Label, CLASS_NAMES, LABELS};
use crate::model::{forward, ModelError, ModelParams};
use crate::preprocess::{InputSize, Variant, INPUT_SIZES, VARIANTS};
use crate::tensor::Tensor;
use rayon::prelude::*;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction and truth sequences differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("{metric} undefined for class {class}: zero denominator")]
    UndefinedRate { class: &'static str, metric: &'static str },
    #[error("duplicate comparison cell for ({0}, {1})")]
    DuplicateCell(Variant, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// 3x3 count matrix; cell[p][a] counts samples predicted p with actual a.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    cells: [[u64; 3]; 3],
}

/// One-vs-rest reduction of one class plus the four derived rates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
}

/// Whole-matrix summary: trace/total accuracy and unweighted class means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AggregateMetrics {
    pub overall_accuracy: f64,
    pub macro_sensitivity: f64,
    pub macro_specificity: f64,
    pub macro_precision: f64,
}

impl ConfusionMatrix {
    pub fn from_cells(cells: [[u64; 3]; 3]) -> ConfusionMatrix {
        ConfusionMatrix { cells }
    }

    pub fn cell(&self, predicted: Label, actual: Label) -> u64 {
        self.cells[predicted.index()][actual.index()]
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.cells[i][i]).sum()
    }

    pub fn row_sum(&self, predicted: usize) -> u64 {
        self.cells[predicted].iter().sum()
    }

    pub fn col_sum(&self, actual: usize) -> u64 {
        (0..3).map(|p| self.cells[p][actual]).sum()
    }

    /// CSV rendering: a fixed comment line naming the axis convention, then
    /// three integer rows (row = predicted).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# rows=predicted cols=actual order=glioma,meningioma,pituitary\n");
        for row in &self.cells {
            out.push_str(&format!("{},{},{}\n", row[0], row[1], row[2]));
        }
        out
    }
}

/// Lowest-index argmax: ties break toward the smaller class index.
pub fn argmax_class(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Class decision for one preprocessed sample.
pub fn predict(params: &ModelParams, x: &Tensor) -> Result<Label, EvalError> {
    let (probs, _) = forward(params, x)?;
    Ok(LABELS[argmax_class(probs.data())])
}

/// Class decisions for a whole sample set; order matches the input order.
pub fn predict_batch(params: &ModelParams, samples: &[Tensor]) -> Result<Vec<Label>, EvalError> {
    samples
        .par_iter()
        .map(|x| predict(params, x))
        .collect::<Result<Vec<_>, _>>()
}

pub fn confusion_matrix(predictions: &[Label], truths: &[Label]) -> Result<ConfusionMatrix, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), truths.len()));
    }
    let mut cells = [[0u64; 3]; 3];
    for (p, a) in predictions.iter().zip(truths) {
        cells[p.index()][a.index()] += 1;
    }
    Ok(ConfusionMatrix { cells })
}

fn rate(num: u64, den: u64, class: &'static str, metric: &'static str) -> Result<f64, EvalError> {
    if den == 0 {
        return Err(EvalError::UndefinedRate { class, metric });
    }
    Ok(num as f64 / den as f64)
}

/// One-vs-rest metrics for one class:
///   accuracy    = (TP+TN)/(TP+FP+TN+FN)
///   sensitivity = TP/(TP+FN)
///   specificity = TN/(TN+FP)
///   precision   = TP/(TP+FP)
pub fn per_class_metrics(cm: &ConfusionMatrix, class: Label) -> Result<ClassMetrics, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let k = class.index();
    let tp = cm.cells[k][k];
    let fp = cm.row_sum(k) - tp;
    let fn_ = cm.col_sum(k) - tp;
    let tn = total - tp - fp - fn_;
    let name = CLASS_NAMES[k];
    Ok(ClassMetrics {
        tp,
        fp,
        fn_,
        tn,
        accuracy: rate(tp + tn, total, name, "accuracy")?,
        sensitivity: rate(tp, tp + fn_, name, "sensitivity")?,
        specificity: rate(tn, tn + fp, name, "specificity")?,
        precision: rate(tp, tp + fp, name, "precision")?,
    })
}

pub fn aggregate_metrics(cm: &ConfusionMatrix) -> Result<AggregateMetrics, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let per: Vec<ClassMetrics> = LABELS
        .iter()
        .map(|&l| per_class_metrics(cm, l))
        .collect::<Result<_, _>>()?;
    let mean = |f: fn(&ClassMetrics) -> f64| per.iter().map(f).sum::<f64>() / per.len() as f64;
    Ok(AggregateMetrics {
        overall_accuracy: cm.trace() as f64 / total as f64,
        macro_sensitivity: mean(|m| m.sensitivity),
        macro_specificity: mean(|m| m.specificity),
        macro_precision: mean(|m| m.precision),
    })
}

/// JSON metrics report, one per evaluated partition.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall_accuracy: f64,
    pub per_class: Vec<ClassMetricsReport>,
    #[serde(rename = "macro")]
    pub macro_: MacroMetricsReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassMetricsReport {
    pub label: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MacroMetricsReport {
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
}

pub fn metrics_report(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    let agg = aggregate_metrics(cm)?;
    let per_class = LABELS
        .iter()
        .map(|&l| {
            let m = per_class_metrics(cm, l)?;
            Ok(ClassMetricsReport {
                label: l.name().to_string(),
                tp: m.tp,
                fp: m.fp,
                fn_: m.fn_,
                tn: m.tn,
                accuracy: m.accuracy,
                sensitivity: m.sensitivity,
                specificity: m.specificity,
                precision: m.precision,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(MetricsReport {
        overall_accuracy: agg.overall_accuracy,
        per_class,
        macro_: MacroMetricsReport {
            sensitivity: agg.macro_sensitivity,
            specificity: agg.macro_specificity,
            precision: agg.macro_precision,
        },
    })
}

pub fn metrics_report_json(report: &MetricsReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

/// One filled cell of the 3x3 comparison grid. `accuracy` is a fraction in
/// [0, 1]; rendering multiplies by 100.
#[derive(Clone, Debug)]
pub struct ComparisonCell {
    pub variant: Variant,
    pub size: InputSize,
    pub accuracy: f64,
    pub metrics: Option<AggregateMetrics>,
}

/// Renders the comparison grid: rows cropped, uncropped, segmented; columns
/// 32, 64, 128; accuracies as percentages to two decimals; missing cells as
/// an em dash. Output is a pure function of the cells.
pub fn render_comparison(cells: &[ComparisonCell]) -> Result<String, EvalError> {
    let mut grid: [[Option<f64>; 3]; 3] = [[None; 3]; 3];
    for cell in cells {
        let r = VARIANTS.iter().position(|&v| v == cell.variant).unwrap();
        let c = INPUT_SIZES.iter().position(|&s| s == cell.size).unwrap();
        if grid[r][c].is_some() {
            return Err(EvalError::DuplicateCell(cell.variant, cell.size.side()));
        }
        grid[r][c] = Some(cell.accuracy);
    }
    let mut out = String::new();
    out.push_str("| variant   |     32 |     64 |    128 |\n");
    out.push_str("|-----------|-------:|-------:|-------:|\n");
    for (r, &variant) in VARIANTS.iter().enumerate() {
        out.push_str(&format!("| {:<9} |", variant.name()));
        for c in 0..3 {
            match grid[r][c] {
                Some(acc) => out.push_str(&format!(" {:>6.2} |", acc * 100.0)),
                None => out.push_str(&format!(" {:>6} |", "—")),
            }
        }
        out.push('\n');
    }
    Ok(out)
}
