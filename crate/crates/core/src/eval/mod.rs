//! Scoring: confusion matrices, per-class and macro F1, submission files.

pub mod ablation;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde_json::json;

use crate::ensemble::Prediction;
use crate::{ClassLabel, Error, Result};

/// 3x3 counts, rows = true class, columns = predicted class, in label order
/// (-1, 0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionMatrix {
    cells: [[usize; 3]; 3],
}

impl ConfusionMatrix {
    pub fn cell(&self, truth: ClassLabel, pred: ClassLabel) -> usize {
        self.cells[truth.index()][pred.index()]
    }

    pub fn cells(&self) -> &[[usize; 3]; 3] {
        &self.cells
    }

    pub fn total(&self) -> usize {
        self.cells.iter().flatten().sum()
    }

    /// Samples of `class` in the truth column.
    pub fn support(&self, class: ClassLabel) -> usize {
        self.cells[class.index()].iter().sum()
    }

    pub fn render(&self) -> String {
        let mut out = String::from("true\\pred      -1       0       1\n");
        for truth in ClassLabel::ALL {
            let _ = write!(out, "{:>9}", truth.to_string());
            for pred in ClassLabel::ALL {
                let _ = write!(out, "{:>8}", self.cell(truth, pred));
            }
            out.push('\n');
        }
        out
    }
}

/// Count (true, predicted) pairs into a confusion matrix.
pub fn confusion(truth: &[ClassLabel], pred: &[ClassLabel]) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Invalid("cannot score empty label lists".into()));
    }
    let mut cells = [[0usize; 3]; 3];
    for (&t, &p) in truth.iter().zip(pred) {
        cells[t.index()][p.index()] += 1;
    }
    Ok(ConfusionMatrix { cells })
}

/// Per-class and macro F1. Degenerate 0/0 ratios are defined as 0, so a class
/// that is never predicted scores 0 rather than being dropped from the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct F1Report {
    pub per_class_f1: BTreeMap<ClassLabel, f64>,
    pub macro_f1: f64,
    pub support: BTreeMap<ClassLabel, usize>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn f1_report(cm: &ConfusionMatrix) -> F1Report {
    let mut per_class_f1 = BTreeMap::new();
    let mut support = BTreeMap::new();
    for class in ClassLabel::ALL {
        let i = class.index();
        let tp = cm.cells[i][i] as f64;
        let fp: f64 = (0..3).filter(|&j| j != i).map(|j| cm.cells[j][i] as f64).sum();
        let fn_: f64 = (0..3).filter(|&j| j != i).map(|j| cm.cells[i][j] as f64).sum();
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        per_class_f1.insert(class, f1);
        support.insert(class, cm.support(class));
    }
    let macro_f1 = per_class_f1.values().sum::<f64>() / per_class_f1.len() as f64;
    F1Report {
        per_class_f1,
        macro_f1,
        support,
    }
}

/// Micro-averaged F1; with one label per sample this equals accuracy.
pub fn micro_f1(cm: &ConfusionMatrix) -> f64 {
    let tp: usize = (0..3).map(|i| cm.cells[i][i]).sum();
    ratio(tp as f64, cm.total() as f64)
}

impl F1Report {
    pub fn render(&self, cm: &ConfusionMatrix) -> String {
        let mut out = String::new();
        for (class, f1) in &self.per_class_f1 {
            let _ = writeln!(
                out,
                "class {class}: f1 {:.4} (support {})",
                f1, self.support[class]
            );
        }
        let _ = writeln!(out, "macro f1: {:.4}", self.macro_f1);
        let _ = writeln!(out, "micro f1: {:.4}", micro_f1(cm));
        out
    }

    /// Machine-readable report document.
    pub fn to_json(&self, cm: &ConfusionMatrix) -> serde_json::Value {
        let per_class: BTreeMap<String, f64> = self
            .per_class_f1
            .iter()
            .map(|(c, f)| (c.to_string(), *f))
            .collect();
        let support: BTreeMap<String, usize> = self
            .support
            .iter()
            .map(|(c, s)| (c.to_string(), *s))
            .collect();
        json!({
            "per_class_f1": per_class,
            "macro_f1": self.macro_f1,
            "micro_f1": micro_f1(cm),
            "support": support,
            "confusion": cm.cells,
        })
    }
}

/// Write the competition submission table: `id,malignant`, one row per
/// prediction in input order, trailing newline, no extra whitespace.
pub fn write_submission(predictions: &[Prediction], path: &Path) -> Result<()> {
    let mut seen = BTreeSet::new();
    for p in predictions {
        if !seen.insert(p.id.as_str()) {
            return Err(Error::DuplicateId { id: p.id.clone() });
        }
    }
    let mut out = String::from("id,malignant\n");
    for p in predictions {
        let _ = writeln!(out, "{},{}", p.id, p.label);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Full-precision prediction dump for audits: `id,p_neg1,p_0,p_1,label`.
pub fn write_prediction_dump(predictions: &[Prediction], path: &Path) -> Result<()> {
    let mut out = String::from("id,p_neg1,p_0,p_1,label\n");
    for p in predictions {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.id, p.mean_probs[0], p.mean_probs[1], p.mean_probs[2], p.label
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
