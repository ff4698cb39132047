//! Fine-tuning: mini-batch SGD with momentum, best-loss checkpoint retention,
//! and the fixed training pipeline (split, balance the training side, pad to
//! full-corpus maxima, train each ensemble member with a derived seed).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayD};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{balance_corpus, pad_to, JitterSpec, PaddingSpec, Placement};
use crate::corpus::{compute_stats, stratified_split, ImageSample, SplitSpec};
use crate::model::{build_classifier, BackboneSpec, Classifier, EnsembleSpec};
use crate::nn::{NamedTensor, Param};
use crate::{derive_seed, ClassLabel, Error, Result};

/// Which loss picks the retained checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    ValidationLoss,
    TrainingLoss,
}

/// Training hyperparameters. The defaults are the pipeline's reference regime:
/// 100 epochs of SGD at learning rate 0.001 with momentum 0.9.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub selection_mode: SelectionMode,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.001,
            momentum: 0.9,
            batch_size: 8,
            seed: 0,
            selection_mode: SelectionMode::ValidationLoss,
            validation_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidSpec("epochs must be at least 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidSpec(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidSpec("batch_size must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "validation_fraction must be in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// SGD with momentum: v <- momentum * v + g; p <- p - lr * v.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<ArrayD<f64>>,
}

impl SgdMomentum {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        }
    }

    fn update(&mut self, index: usize, param: &mut Param) {
        if self.velocity.len() == index {
            self.velocity.push(ArrayD::zeros(param.value.raw_dim()));
        }
        let v = &mut self.velocity[index];
        let momentum = self.momentum;
        v.zip_mut_with(&param.grad, |v, &g| *v = momentum * *v + g);
        let lr = self.learning_rate;
        param.value.zip_mut_with(v, |p, &v| *p -= lr * v);
    }

    /// One update over a raw parameter list.
    pub fn step_params(&mut self, params: &mut [Param]) {
        for (i, p) in params.iter_mut().enumerate() {
            self.update(i, p);
        }
    }

    /// One update over every classifier parameter, in traversal order.
    pub fn step(&mut self, classifier: &mut Classifier) {
        let mut index = 0;
        let mut this = std::mem::replace(self, SgdMomentum::new(0.0, 0.0));
        classifier.for_each_param_mut(&mut |p| {
            this.update(index, p);
            index += 1;
        });
        *self = this;
    }
}

/// Earliest epoch attaining the minimum loss. Epochs are 1-based. Returns
/// `None` for an empty sequence.
pub fn select_best(losses: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &loss) in losses.iter().enumerate() {
        match best {
            Some((_, b)) if loss >= b => {}
            _ => best = Some((i + 1, loss)),
        }
    }
    best
}

/// Mean cross-entropy over softmax probabilities plus the score-space
/// gradient of that mean.
pub(crate) fn cross_entropy(
    scores: &Array2<f64>,
    targets: &[usize],
) -> Result<(f64, Array2<f64>)> {
    assert_eq!(scores.nrows(), targets.len());
    let n = targets.len() as f64;
    let mut grad = Array2::<f64>::zeros(scores.raw_dim());
    let mut total = 0.0;
    for (i, (row, &target)) in scores.rows().into_iter().zip(targets).enumerate() {
        let slice = row.as_slice().expect("row-major scores");
        let max = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + slice.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - slice[target];
        for (j, &s) in slice.iter().enumerate() {
            let p = (s - lse).exp();
            grad[[i, j]] = (p - if j == target { 1.0 } else { 0.0 }) / n;
        }
    }
    Ok((total / n, grad))
}

/// Mean cross-entropy of a classifier over a labeled set, eval mode.
pub fn mean_loss(classifier: &Classifier, set: &[ImageSample], batch_size: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut total = 0.0;
    for chunk in set.chunks(batch_size.max(1)) {
        let targets = target_indices(chunk)?;
        let scores = classifier.forward(chunk)?;
        let (loss, _) = cross_entropy(&scores, &targets)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: "evaluation loss".to_string(),
            });
        }
        total += loss * chunk.len() as f64;
    }
    Ok(total / set.len() as f64)
}

fn target_indices(samples: &[ImageSample]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| {
            s.label.map(|l| l.index()).ok_or_else(|| Error::UnlabeledSample {
                id: s.id.clone(),
            })
        })
        .collect()
}

/// Snapshot of the best model seen while training one ensemble member.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub member_index: usize,
    pub spec: BackboneSpec,
    pub parameters: Vec<NamedTensor>,
    pub best_loss: f64,
    pub best_epoch: usize,
    /// Class value per score index; fixed at [-1, 0, 1].
    pub label_map: Vec<i8>,
    pub padding: PaddingSpec,
    pub fingerprint: String,
    pub num_classes: usize,
}

impl Checkpoint {
    /// Rebuild the trained classifier (architecture from the spec, parameters
    /// from the snapshot).
    pub fn to_classifier(&self) -> Result<Classifier> {
        let spec = self.spec.clone().with_pretrained(false);
        let mut classifier = build_classifier(&spec, self.num_classes, 0)?;
        classifier.load_state(&self.parameters)?;
        Ok(classifier)
    }

    pub fn label_for_index(&self, index: usize) -> Result<ClassLabel> {
        self.label_map
            .get(index)
            .copied()
            .map(|v| ClassLabel::new(v as i64))
            .transpose()?
            .ok_or_else(|| Error::Invalid(format!("score index {index} out of label map")))
    }
}

/// One row of the per-run training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub member: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Checkpoint plus the epoch-by-epoch loss log for one member.
#[derive(Debug, Clone)]
pub struct MemberOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
}

fn fingerprint(
    config: &TrainConfig,
    train_set: &[ImageSample],
    val_set: &[ImageSample],
    padding: &PaddingSpec,
) -> String {
    #[derive(Serialize)]
    struct Manifest<'a> {
        config: &'a TrainConfig,
        padding: &'a PaddingSpec,
        label_map: [i8; 3],
        train: Vec<(&'a str, u32, u32, Option<i8>)>,
        validation: Vec<(&'a str, u32, u32, Option<i8>)>,
    }
    fn describe(set: &[ImageSample]) -> Vec<(&str, u32, u32, Option<i8>)> {
        set.iter()
            .map(|s| {
                (
                    s.id.as_str(),
                    s.height(),
                    s.width(),
                    s.label.map(|l| l.value()),
                )
            })
            .collect()
    }
    let manifest = Manifest {
        config,
        padding,
        label_map: [-1, 0, 1],
        train: describe(train_set),
        validation: describe(val_set),
    };
    let bytes = serde_json::to_vec(&manifest).expect("manifest serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Fine-tune one classifier for exactly `config.epochs` epochs and keep the
/// earliest checkpoint attaining the minimum selection loss.
///
/// Batches are reshuffled each epoch from a seed derived from
/// (config.seed, epoch). The training set must be uniformly sized and fully
/// labeled; validation is required when selecting on validation loss.
pub fn train_member(
    mut classifier: Classifier,
    train_set: &[ImageSample],
    val_set: &[ImageSample],
    config: &TrainConfig,
    member_index: usize,
    padding: &PaddingSpec,
) -> Result<MemberOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if config.selection_mode == SelectionMode::ValidationLoss && val_set.is_empty() {
        return Err(Error::InvalidSpec(
            "validation set is empty but selection_mode is validation_loss".into(),
        ));
    }
    let fingerprint = fingerprint(config, train_set, val_set, padding);
    let mut optimizer = SgdMomentum::new(config.learning_rate, config.momentum);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut selection_losses = Vec::with_capacity(config.epochs);
    let mut log = Vec::with_capacity(config.epochs);
    let mut snapshot: Option<(Vec<NamedTensor>, usize, f64)> = None;

    for epoch in 1..=config.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "epoch-shuffle", epoch as u64));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for (batch_index, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<ImageSample> =
                chunk.iter().map(|&i| train_set[i].clone()).collect();
            let targets = target_indices(&batch)?;
            let x = classifier.prepare_batch(&batch)?;
            let (scores, cache) = classifier.forward_train(&x)?;
            let (loss, dscores) = cross_entropy(&scores, &targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                });
            }
            classifier.zero_grads();
            classifier.backward(&cache, &dscores);
            optimizer.step(&mut classifier);
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train_set.len() as f64;

        let val_loss = if val_set.is_empty() {
            None
        } else {
            Some(mean_loss(&classifier, val_set, config.batch_size)?)
        };
        let selection = match config.selection_mode {
            SelectionMode::TrainingLoss => train_loss,
            SelectionMode::ValidationLoss => val_loss.expect("validated non-empty above"),
        };
        selection_losses.push(selection);
        let (best_epoch, best_loss) = select_best(&selection_losses).expect("non-empty");
        if best_epoch == epoch {
            snapshot = Some((classifier.state_tensors(), best_epoch, best_loss));
        }
        log.push(EpochRecord {
            member: member_index,
            epoch,
            train_loss,
            val_loss,
        });
    }

    let (parameters, best_epoch, best_loss) = snapshot.expect("at least one epoch ran");
    Ok(MemberOutcome {
        checkpoint: Checkpoint {
            member_index,
            spec: classifier.spec().clone(),
            parameters,
            best_loss,
            best_epoch,
            label_map: vec![-1, 0, 1],
            padding: *padding,
            fingerprint,
            num_classes: classifier.num_classes(),
        },
        log,
    })
}

/// How the pipeline makes image sizes uniform before batching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizingMode {
    /// Pad to corpus maxima (the pipeline's method; keeps every pixel).
    Pad,
    /// Stretch-resize to corpus maxima (baseline; distorts features).
    Resize,
    /// Center-crop to corpus minima (baseline; discards content).
    Crop,
}

/// Optional overrides on the computed padding target.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaddingOverrides {
    pub target_height: Option<u32>,
    pub target_width: Option<u32>,
    pub fill: Option<[u8; 3]>,
    pub placement: Option<Placement>,
}

/// Knobs the reference pipeline keeps fixed; ablations vary them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub balance: bool,
    pub sizing: SizingMode,
    pub padding_overrides: PaddingOverrides,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            balance: true,
            sizing: SizingMode::Pad,
            padding_overrides: PaddingOverrides::default(),
        }
    }
}

/// The training data after the pipeline's data stages, plus the sizing target
/// every later input must match.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Vec<ImageSample>,
    pub validation: Vec<ImageSample>,
    pub padding: PaddingSpec,
}

fn resize_sample(sample: &ImageSample, height: u32, width: u32) -> ImageSample {
    let pixels = image::imageops::resize(
        &sample.pixels,
        width,
        height,
        image::imageops::FilterType::Triangle,
    );
    ImageSample {
        id: sample.id.clone(),
        pixels,
        label: sample.label,
    }
}

fn center_crop_sample(sample: &ImageSample, height: u32, width: u32) -> ImageSample {
    let y = (sample.height() - height) / 2;
    let x = (sample.width() - width) / 2;
    let pixels = image::imageops::crop_imm(&sample.pixels, x, y, width, height).to_image();
    ImageSample {
        id: sample.id.clone(),
        pixels,
        label: sample.label,
    }
}

/// Make every sample's size equal to the spec target under the given mode.
pub fn unify_sizes(
    samples: &[ImageSample],
    spec: &PaddingSpec,
    mode: SizingMode,
) -> Result<Vec<ImageSample>> {
    samples
        .iter()
        .map(|s| match mode {
            SizingMode::Pad => pad_to(s, spec),
            SizingMode::Resize => Ok(resize_sample(s, spec.target_height, spec.target_width)),
            SizingMode::Crop => {
                if s.height() < spec.target_height || s.width() < spec.target_width {
                    return Err(Error::Invalid(format!(
                        "sample {} is {}x{}, smaller than crop target {}x{}",
                        s.id,
                        s.height(),
                        s.width(),
                        spec.target_height,
                        spec.target_width
                    )));
                }
                Ok(center_crop_sample(s, spec.target_height, spec.target_width))
            }
        })
        .collect()
}

/// Run the data stages of the pipeline in their fixed order: stratified split
/// first, class balancing on the training side only, then sizing to the
/// statistics of the full labeled corpus.
pub fn prepare_training_data(
    corpus: &[ImageSample],
    jitter: &JitterSpec,
    config: &TrainConfig,
    options: &TrainOptions,
) -> Result<PreparedData> {
    config.validate()?;
    let split_spec = SplitSpec {
        validation_fraction: config.validation_fraction,
        seed: config.seed,
        stratified: true,
    };
    let (train, validation) = stratified_split(corpus, &split_spec)?;

    let train = if options.balance {
        balance_corpus(&train, jitter, derive_seed(config.seed, "balance", 0))?
    } else {
        train
    };

    let stats = compute_stats(corpus)?;
    let ov = &options.padding_overrides;
    let padding = match options.sizing {
        SizingMode::Pad | SizingMode::Resize => {
            let mut spec = PaddingSpec::from_stats(&stats);
            if let Some(h) = ov.target_height {
                spec.target_height = h;
            }
            if let Some(w) = ov.target_width {
                spec.target_width = w;
            }
            if let Some(fill) = ov.fill {
                spec.fill = fill;
            }
            if let Some(placement) = ov.placement {
                spec.placement = placement;
            }
            spec
        }
        SizingMode::Crop => {
            let min_h = corpus.iter().map(|s| s.height()).min().expect("non-empty");
            let min_w = corpus.iter().map(|s| s.width()).min().expect("non-empty");
            PaddingSpec {
                target_height: min_h,
                target_width: min_w,
                fill: ov.fill.unwrap_or(PaddingSpec::DEFAULT_FILL),
                placement: ov.placement.unwrap_or(Placement::Center),
            }
        }
    };

    Ok(PreparedData {
        train: unify_sizes(&train, &padding, options.sizing)?,
        validation: unify_sizes(&validation, &padding, options.sizing)?,
        padding,
    })
}

/// Train every ensemble member on the prepared data. Member `i` trains with
/// seed `derive_seed(config.seed, "member", i)`; members run in parallel and
/// results are returned in member order.
pub fn train_ensemble(
    spec: &EnsembleSpec,
    corpus: &[ImageSample],
    jitter: &JitterSpec,
    config: &TrainConfig,
) -> Result<Vec<MemberOutcome>> {
    train_ensemble_with_options(spec, corpus, jitter, config, &TrainOptions::default())
}

pub fn train_ensemble_with_options(
    spec: &EnsembleSpec,
    corpus: &[ImageSample],
    jitter: &JitterSpec,
    config: &TrainConfig,
    options: &TrainOptions,
) -> Result<Vec<MemberOutcome>> {
    run_pipeline(spec, corpus, jitter, config, options).map(|(outcomes, _)| outcomes)
}

/// [`train_ensemble_with_options`] plus the prepared data it trained on, for
/// callers that evaluate on the same held-out split.
pub fn run_pipeline(
    spec: &EnsembleSpec,
    corpus: &[ImageSample],
    jitter: &JitterSpec,
    config: &TrainConfig,
    options: &TrainOptions,
) -> Result<(Vec<MemberOutcome>, PreparedData)> {
    if spec.is_empty() {
        return Err(Error::InvalidSpec("ensemble needs at least 1 member".into()));
    }
    let prepared = prepare_training_data(corpus, jitter, config, options)?;
    let outcomes = spec.members
        .par_iter()
        .enumerate()
        .map(|(index, backbone)| {
            let member_seed = derive_seed(config.seed, "member", index as u64);
            let classifier = build_classifier(backbone, 3, member_seed)?;
            let member_config = TrainConfig {
                seed: member_seed,
                ..config.clone()
            };
            train_member(
                classifier,
                &prepared.train,
                &prepared.validation,
                &member_config,
                index,
                &prepared.padding,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((outcomes, prepared))
}

// --- checkpoint container -------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"HPCK";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    member_index: usize,
    spec: BackboneSpec,
    best_loss: f64,
    best_epoch: usize,
    label_map: Vec<i8>,
    padding: PaddingSpec,
    fingerprint: Option<String>,
    num_classes: usize,
}

/// Write a checkpoint as a versioned binary container: a JSON metadata header
/// followed by the raw tensor payload. Byte-identical for identical inputs.
pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let meta = CheckpointMeta {
        member_index: checkpoint.member_index,
        spec: checkpoint.spec.clone(),
        best_loss: checkpoint.best_loss,
        best_epoch: checkpoint.best_epoch,
        label_map: checkpoint.label_map.clone(),
        padding: checkpoint.padding,
        fingerprint: Some(checkpoint.fingerprint.clone()),
        num_classes: checkpoint.num_classes,
    };
    let meta_bytes = serde_json::to_vec(&meta).expect("metadata serializes");
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let write = |w: &mut dyn Write| -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(meta_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&meta_bytes)?;
        Ok(())
    };
    write(&mut w).map_err(|e| Error::io(path, e))?;
    crate::tensor_io::write_tensors(&mut w, &checkpoint.parameters)
        .map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = std::io::BufReader::new(file);
    let corrupt = |msg: String| Error::CheckpointCorrupt {
        path: path.to_path_buf(),
        msg,
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| corrupt(format!("short read on magic: {e}")))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(corrupt("not a checkpoint container".to_string()));
    }
    let mut version_bytes = [0u8; 4];
    r.read_exact(&mut version_bytes)
        .map_err(|e| corrupt(format!("short read on version: {e}")))?;
    let version = u32::from_le_bytes(version_bytes);
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            path: path.to_path_buf(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let meta_len = crate::tensor_io::read_u64(&mut r)
        .map_err(|e| corrupt(format!("short read on header length: {e}")))? as usize;
    if meta_len > 1 << 24 {
        return Err(corrupt(format!("implausible header length {meta_len}")));
    }
    let mut meta_bytes = vec![0u8; meta_len];
    r.read_exact(&mut meta_bytes)
        .map_err(|e| corrupt(format!("short read on header: {e}")))?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| corrupt(format!("metadata parse failure: {e}")))?;
    let fingerprint = match meta.fingerprint {
        Some(fp) if !fp.is_empty() => fp,
        _ => {
            return Err(Error::CheckpointFingerprintMissing {
                path: path.to_path_buf(),
            })
        }
    };
    let parameters = crate::tensor_io::read_tensors(&mut r)
        .map_err(|e| corrupt(format!("tensor payload: {e}")))?;
    Ok(Checkpoint {
        member_index: meta.member_index,
        spec: meta.spec,
        parameters,
        best_loss: meta.best_loss,
        best_epoch: meta.best_epoch,
        label_map: meta.label_map,
        padding: meta.padding,
        fingerprint,
        num_classes: meta.num_classes,
    })
}

/// Per-class histogram of a labeled set, for balance checks and reports.
pub fn class_histogram(samples: &[ImageSample]) -> BTreeMap<ClassLabel, usize> {
    let mut counts = BTreeMap::new();
    for s in samples {
        if let Some(label) = s.label {
            *counts.entry(label).or_insert(0) += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BackboneSpec;
    use image::{Rgb, RgbImage};

    fn sample(id: &str, h: u32, w: u32, rgb: [u8; 3], label: ClassLabel) -> ImageSample {
        ImageSample::new(id, RgbImage::from_pixel(w, h, Rgb(rgb)), Some(label)).unwrap()
    }

    fn tiny_corpus() -> Vec<ImageSample> {
        let mut corpus = Vec::new();
        for i in 0..6 {
            corpus.push(sample(&format!("n{i}"), 10, 12, [220, 40, 40], ClassLabel::NEG));
        }
        for i in 0..4 {
            corpus.push(sample(&format!("z{i}"), 12, 10, [40, 220, 40], ClassLabel::ZERO));
        }
        for i in 0..3 {
            corpus.push(sample(&format!("o{i}"), 8, 8, [40, 40, 220], ClassLabel::ONE));
        }
        corpus
    }

    #[test]
    fn momentum_matches_closed_form_recurrence() {
        // One parameter, quadratic loss L(p) = p^2 / 2, gradient g = p.
        let mut optimizer = SgdMomentum::new(0.001, 0.9);
        let mut params = vec![Param::new(ndarray::arr0(1.0).into_dyn())];
        let mut reference_p = 1.0f64;
        let mut reference_v = 0.0f64;
        for _ in 0..10 {
            let p = params[0].value[[]];
            params[0].grad.fill(p);
            optimizer.step_params(&mut params);

            reference_v = 0.9 * reference_v + reference_p;
            reference_p -= 0.001 * reference_v;
            assert!((params[0].value[[]] - reference_p).abs() < 1e-9);
        }
    }

    #[test]
    fn select_best_takes_earliest_minimum() {
        assert_eq!(select_best(&[0.9, 0.4, 0.4, 0.7]), Some((2, 0.4)));
        assert_eq!(select_best(&[0.5]), Some((1, 0.5)));
        assert_eq!(select_best(&[3.0, 2.0, 1.0]), Some((3, 1.0)));
        assert_eq!(select_best(&[]), None);
    }

    #[test]
    fn single_epoch_checkpoints_epoch_one() {
        let corpus = tiny_corpus();
        let config = TrainConfig {
            epochs: 1,
            batch_size: 4,
            seed: 3,
            validation_fraction: 0.25,
            ..TrainConfig::default()
        };
        let prepared = prepare_training_data(
            &corpus,
            &JitterSpec::mild(1),
            &config,
            &TrainOptions::default(),
        )
        .unwrap();
        let classifier = build_classifier(&BackboneSpec::tiny(), 3, 5).unwrap();
        let outcome = train_member(
            classifier,
            &prepared.train,
            &prepared.validation,
            &config,
            0,
            &prepared.padding,
        )
        .unwrap();
        assert_eq!(outcome.checkpoint.best_epoch, 1);
        assert_eq!(outcome.log.len(), 1);
    }

    #[test]
    fn validation_selection_requires_validation_samples() {
        let corpus = tiny_corpus();
        let config = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let classifier = build_classifier(&BackboneSpec::tiny(), 3, 5).unwrap();
        let padded = unify_sizes(
            &corpus,
            &PaddingSpec {
                target_height: 12,
                target_width: 12,
                fill: [255, 255, 255],
                placement: Placement::Center,
            },
            SizingMode::Pad,
        )
        .unwrap();
        let err = train_member(classifier, &padded, &[], &config, 0, &PaddingSpec::from_stats(&compute_stats(&corpus).unwrap()));
        assert!(matches!(err, Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn training_set_entering_members_is_balanced() {
        let corpus = tiny_corpus();
        let config = TrainConfig {
            epochs: 1,
            seed: 11,
            validation_fraction: 0.25,
            ..TrainConfig::default()
        };
        let prepared = prepare_training_data(
            &corpus,
            &JitterSpec::mild(4),
            &config,
            &TrainOptions::default(),
        )
        .unwrap();
        let counts = class_histogram(&prepared.train);
        let values: Vec<usize> = counts.values().copied().collect();
        assert_eq!(values.len(), 3);
        assert!(values.windows(2).all(|w| w[0] == w[1]), "{counts:?}");
        // Every image shares the corpus-max dimensions.
        for s in prepared.train.iter().chain(&prepared.validation) {
            assert_eq!((s.height(), s.width()), (12, 12));
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let corpus = tiny_corpus();
        let config = TrainConfig {
            epochs: 2,
            batch_size: 4,
            seed: 9,
            validation_fraction: 0.25,
            ..TrainConfig::default()
        };
        let outcomes = train_ensemble(
            &EnsembleSpec::tiny(1),
            &corpus,
            &JitterSpec::mild(2),
            &config,
        )
        .unwrap();
        let checkpoint = &outcomes[0].checkpoint;

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("member0.hpck");
        save_checkpoint(checkpoint, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(&loaded, checkpoint);

        // Version tampering is a distinct error.
        let good = std::fs::read(&path).unwrap();
        let mut bytes = good.clone();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::CheckpointVersion { found: 9, .. })
        ));

        // Truncated payload.
        std::fs::write(&path, &good[..good.len() - 16]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::CheckpointCorrupt { .. })
        ));
    }

    #[test]
    fn checkpoint_without_fingerprint_is_rejected() {
        // Hand-build a container whose metadata header lacks the fingerprint.
        let meta = serde_json::json!({
            "member_index": 0,
            "spec": BackboneSpec::tiny(),
            "best_loss": 0.5,
            "best_epoch": 1,
            "label_map": [-1, 0, 1],
            "padding": PaddingSpec {
                target_height: 8,
                target_width: 8,
                fill: [255, 255, 255],
                placement: Placement::Center,
            },
            "fingerprint": null,
            "num_classes": 3,
        });
        let meta_bytes = serde_json::to_vec(&meta).unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"HPCK");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&(meta_bytes.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&meta_bytes);
        bytes.extend_from_slice(&0u64.to_le_bytes()); // zero tensors

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nofp.hpck");
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::CheckpointFingerprintMissing { .. })
        ));
    }

    #[test]
    fn loaded_checkpoint_reproduces_forward_outputs() {
        let corpus = tiny_corpus();
        let config = TrainConfig {
            epochs: 2,
            batch_size: 4,
            seed: 21,
            validation_fraction: 0.25,
            ..TrainConfig::default()
        };
        let outcomes = train_ensemble(
            &EnsembleSpec::tiny(1),
            &corpus,
            &JitterSpec::mild(2),
            &config,
        )
        .unwrap();
        let checkpoint = &outcomes[0].checkpoint;
        let prepared = prepare_training_data(
            &corpus,
            &JitterSpec::mild(2),
            &config,
            &TrainOptions::default(),
        )
        .unwrap();

        let before = checkpoint.to_classifier().unwrap();
        let scores_before = before.forward(&prepared.validation).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cp.hpck");
        save_checkpoint(checkpoint, &path).unwrap();
        let after = load_checkpoint(&path).unwrap().to_classifier().unwrap();
        let scores_after = after.forward(&prepared.validation).unwrap();
        assert_eq!(scores_before, scores_after);
    }

    #[test]
    fn ensemble_training_is_deterministic_and_indexed() {
        let corpus = tiny_corpus();
        let config = TrainConfig {
            epochs: 2,
            batch_size: 4,
            seed: 33,
            validation_fraction: 0.25,
            ..TrainConfig::default()
        };
        let jitter = JitterSpec::mild(8);
        let spec = EnsembleSpec::tiny(3);
        let run1 = train_ensemble(&spec, &corpus, &jitter, &config).unwrap();
        let run2 = train_ensemble(&spec, &corpus, &jitter, &config).unwrap();
        assert_eq!(run1.len(), 3);
        for (i, (a, b)) in run1.iter().zip(&run2).enumerate() {
            assert_eq!(a.checkpoint.member_index, i);
            assert_eq!(a.checkpoint, b.checkpoint);
        }
        // Distinct members start from distinct seeds.
        assert_ne!(run1[0].checkpoint.parameters, run1[1].checkpoint.parameters);
    }
}
