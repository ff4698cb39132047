//! Inference: every test image is scored by every trained member; per-class
//! probabilities are averaged with an unweighted arithmetic mean and the
//! argmax class (ties toward the lowest class index, label -1 first) is
//! emitted in competition label space.

use ndarray::Array2;
use rayon::prelude::*;

use crate::corpus::ImageSample;
use crate::model::{softmax, softmax_rows};
use crate::train::Checkpoint;
use crate::{ClassLabel, Error, Result};

const PREDICT_BATCH: usize = 32;

/// How member outputs are combined. Probability averaging is the default;
/// logit averaging is available as an alternative mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AveragingMode {
    Probabilities,
    Logits,
}

/// Ensemble output for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    /// One probability row per member, in member order; each row sums to 1.
    pub per_member_probs: Vec<[f64; 3]>,
    pub mean_probs: [f64; 3],
    pub label: ClassLabel,
}

impl Prediction {
    /// Average member probability rows and classify the mean.
    pub fn from_member_probs(id: impl Into<String>, rows: Vec<[f64; 3]>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Invalid("prediction needs at least one member".into()));
        }
        let m = rows.len() as f64;
        let mut mean = [0.0; 3];
        for row in &rows {
            for (acc, v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
        for v in &mut mean {
            *v /= m;
        }
        let label = classify(&mean)?;
        Ok(Self {
            id: id.into(),
            per_member_probs: rows,
            mean_probs: mean,
            label,
        })
    }
}

/// Map a probability vector to its class: argmax with deterministic
/// tie-breaking toward the lowest class index.
pub fn classify(mean_probs: &[f64; 3]) -> Result<ClassLabel> {
    let sum: f64 = mean_probs.iter().sum();
    if mean_probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::MalformedProbabilities {
            probs: mean_probs.to_vec(),
            msg: "entries must be finite and nonnegative".into(),
        });
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::MalformedProbabilities {
            probs: mean_probs.to_vec(),
            msg: format!("entries sum to {sum}, expected 1"),
        });
    }
    let mut best = 0;
    for i in 1..3 {
        if mean_probs[i] > mean_probs[best] {
            best = i;
        }
    }
    ClassLabel::from_index(best)
}

fn check_compatible(checkpoints: &[Checkpoint]) -> Result<()> {
    let first = &checkpoints[0];
    for cp in &checkpoints[1..] {
        if cp.label_map != first.label_map {
            return Err(Error::IncompatibleCheckpoints {
                msg: format!(
                    "member {} label map {:?} differs from member {} label map {:?}",
                    cp.member_index, cp.label_map, first.member_index, first.label_map
                ),
            });
        }
        if cp.padding != first.padding {
            return Err(Error::IncompatibleCheckpoints {
                msg: format!(
                    "member {} padding target {}x{} differs from member {} padding target {}x{}",
                    cp.member_index,
                    cp.padding.target_height,
                    cp.padding.target_width,
                    first.member_index,
                    first.padding.target_height,
                    first.padding.target_width
                ),
            });
        }
    }
    Ok(())
}

fn member_scores(checkpoint: &Checkpoint, corpus: &[ImageSample]) -> Result<Array2<f64>> {
    let classifier = checkpoint.to_classifier()?;
    let mut scores = Array2::zeros((corpus.len(), checkpoint.num_classes));
    let mut row = 0;
    for chunk in corpus.chunks(PREDICT_BATCH) {
        let chunk_scores = classifier.forward(chunk)?;
        for r in chunk_scores.rows() {
            scores.row_mut(row).assign(&r);
            row += 1;
        }
    }
    Ok(scores)
}

/// Run every member over a padded corpus and average their predictions.
///
/// All checkpoints must share one label mapping and one padding target, and
/// every input must already be padded to that target. Output order matches
/// input order; members evaluate in parallel.
pub fn predict(checkpoints: &[Checkpoint], corpus: &[ImageSample]) -> Result<Vec<Prediction>> {
    predict_with_mode(checkpoints, corpus, AveragingMode::Probabilities)
}

pub fn predict_with_mode(
    checkpoints: &[Checkpoint],
    corpus: &[ImageSample],
    mode: AveragingMode,
) -> Result<Vec<Prediction>> {
    if checkpoints.is_empty() {
        return Err(Error::Invalid("predict needs at least one checkpoint".into()));
    }
    check_compatible(checkpoints)?;
    let padding = &checkpoints[0].padding;
    for sample in corpus {
        if (sample.height(), sample.width()) != (padding.target_height, padding.target_width) {
            return Err(Error::UnpaddedInput {
                id: sample.id.clone(),
                height: sample.height(),
                width: sample.width(),
                target_height: padding.target_height,
                target_width: padding.target_width,
            });
        }
    }

    let member_outputs: Vec<Array2<f64>> = checkpoints
        .par_iter()
        .map(|cp| member_scores(cp, corpus))
        .collect::<Result<Vec<_>>>()?;

    match mode {
        AveragingMode::Probabilities => {
            let member_probs: Vec<Array2<f64>> = member_outputs
                .iter()
                .map(softmax_rows)
                .collect::<Result<Vec<_>>>()?;
            corpus
                .iter()
                .enumerate()
                .map(|(i, sample)| {
                    let rows: Vec<[f64; 3]> = member_probs
                        .iter()
                        .map(|probs| {
                            let row = probs.row(i);
                            [row[0], row[1], row[2]]
                        })
                        .collect();
                    Prediction::from_member_probs(sample.id.clone(), rows)
                })
                .collect()
        }
        AveragingMode::Logits => {
            // Mean the raw scores, then softmax once; per-member rows still
            // report each member's own probabilities for the audit dump.
            let m = member_outputs.len() as f64;
            corpus
                .iter()
                .enumerate()
                .map(|(i, sample)| {
                    let mut mean_scores = [0.0; 3];
                    for scores in &member_outputs {
                        for (acc, v) in mean_scores.iter_mut().zip(scores.row(i)) {
                            *acc += v;
                        }
                    }
                    for v in &mut mean_scores {
                        *v /= m;
                    }
                    let mean_probs_vec = softmax(&mean_scores)?;
                    let mean_probs = [mean_probs_vec[0], mean_probs_vec[1], mean_probs_vec[2]];
                    let rows: Vec<[f64; 3]> = member_outputs
                        .iter()
                        .map(|scores| {
                            let row = scores.row(i);
                            softmax(&[row[0], row[1], row[2]]).map(|p| [p[0], p[1], p[2]])
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(Prediction {
                        id: sample.id.clone(),
                        per_member_probs: rows,
                        mean_probs,
                        label: classify(&mean_probs)?,
                    })
                })
                .collect()
        }
    }
}
