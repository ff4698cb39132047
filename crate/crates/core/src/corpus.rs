//! Corpus loading, statistics, and deterministic stratified splits.
//!
//! Dataset layout on disk:
//!
//! ```text
//! <root>/images/*.png|jpg     one raster image per sample, id = file stem
//! <root>/labels.csv           two columns `id,label` with a header row
//! ```
//!
//! All operations are deterministic given their inputs and seed: samples are
//! ordered lexicographically by id after load, regardless of filesystem or
//! decode order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::{ClassLabel, Error, Result};

/// One image with its identity and optional class label.
///
/// Pixels are an 8-bit RGB grid; grayscale inputs are channel-replicated at
/// load time so every sample has exactly 3 channels. Height and width are
/// at least 1 by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSample {
    pub id: String,
    pub pixels: RgbImage,
    pub label: Option<ClassLabel>,
}

impl ImageSample {
    pub fn new(id: impl Into<String>, pixels: RgbImage, label: Option<ClassLabel>) -> Result<Self> {
        if pixels.width() == 0 || pixels.height() == 0 {
            return Err(Error::Invalid(format!(
                "image dimensions must be at least 1x1, got {}x{}",
                pixels.height(),
                pixels.width()
            )));
        }
        Ok(Self {
            id: id.into(),
            pixels,
            label,
        })
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }
}

/// Corpus-wide maxima and per-class histogram.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub max_height: u32,
    pub max_width: u32,
    /// Counts for classes observed in the corpus; unlabeled samples are not counted here.
    pub class_counts: BTreeMap<ClassLabel, usize>,
    pub total: usize,
}

impl CorpusStats {
    pub fn labeled(&self) -> usize {
        self.class_counts.values().sum()
    }

    pub fn count(&self, class: ClassLabel) -> usize {
        self.class_counts.get(&class).copied().unwrap_or(0)
    }

    /// Largest per-class count (the majority class size).
    pub fn majority_count(&self) -> usize {
        self.class_counts.values().copied().max().unwrap_or(0)
    }

    /// Human-readable summary, one fact per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("samples: {}\n", self.total));
        out.push_str(&format!("labeled: {}\n", self.labeled()));
        out.push_str(&format!(
            "max dimensions: {}x{} (height x width)\n",
            self.max_height, self.max_width
        ));
        for (class, count) in &self.class_counts {
            out.push_str(&format!("class {class}: {count}\n"));
        }
        out
    }
}

/// How to carve a validation set out of a labeled corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitSpec {
    /// Fraction of each class (stratified) or of the corpus routed to validation, in (0, 1).
    pub validation_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl SplitSpec {
    pub fn new(validation_fraction: f64, seed: u64) -> Result<Self> {
        if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "validation_fraction must be in (0, 1), got {validation_fraction}"
            )));
        }
        Ok(Self {
            validation_fraction,
            seed,
            stratified: true,
        })
    }
}

/// Load every image under `<root>/images`, attaching labels from the labels table.
///
/// With `labels_path = None`, `<root>/labels.csv` is used when present; a corpus
/// without a labels table loads with every label absent. Samples are returned in
/// lexicographic id order. Errors name the offending sample id or path.
pub fn load_corpus(root: &Path, labels_path: Option<&Path>) -> Result<Vec<ImageSample>> {
    if !root.is_dir() {
        return Err(Error::MissingDirectory {
            path: root.to_path_buf(),
        });
    }
    let images_dir = root.join("images");
    if !images_dir.is_dir() {
        return Err(Error::MissingDirectory { path: images_dir });
    }

    let labels = match labels_path {
        Some(path) => Some(read_labels(path)?),
        None => {
            let default = root.join("labels.csv");
            if default.is_file() {
                Some(read_labels(&default)?)
            } else {
                None
            }
        }
    };

    let mut files: Vec<(String, PathBuf)> = Vec::new();
    let mut seen = BTreeSet::new();
    let entries = fs::read_dir(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&images_dir, e))?;
        let path = entry.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            .unwrap_or(false);
        if !path.is_file() || !is_image {
            continue;
        }
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Invalid(format!("non-utf8 file name: {}", path.display())))?
            .to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId { id });
        }
        files.push((id, path));
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));

    if let Some(labels) = &labels {
        for id in labels.keys() {
            if !seen.contains(id) {
                return Err(Error::LabelWithoutImage {
                    id: id.clone(),
                    root: root.to_path_buf(),
                });
            }
        }
    }

    // Decode in parallel; the sorted file list pins the output order.
    let mut samples = files
        .into_par_iter()
        .map(|(id, path)| {
            let img = image::open(&path)
                .map_err(|e| Error::ImageDecode {
                    id: id.clone(),
                    path: path.clone(),
                    source: e,
                })?
                .to_rgb8();
            let label = labels.as_ref().and_then(|m| m.get(&id).copied());
            ImageSample::new(id, img, label)
        })
        .collect::<Result<Vec<_>>>()?;
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(samples)
}

fn read_labels(path: &Path) -> Result<HashMap<String, ClassLabel>> {
    if !path.is_file() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "labels file not found"),
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::LabelsFormat {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::LabelsFormat {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?
        .clone();
    if headers.len() < 2 {
        return Err(Error::LabelsFormat {
            path: path.to_path_buf(),
            msg: format!("expected columns `id,label`, got {headers:?}"),
        });
    }

    let mut labels = HashMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::LabelsFormat {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let id = row
            .get(0)
            .ok_or_else(|| Error::LabelsFormat {
                path: path.to_path_buf(),
                msg: "row missing id column".into(),
            })?
            .to_string();
        let raw = row.get(1).ok_or_else(|| Error::LabelsFormat {
            path: path.to_path_buf(),
            msg: format!("row for {id} missing label column"),
        })?;
        let label = ClassLabel::parse(raw).map_err(|_| Error::InvalidLabel {
            id: id.clone(),
            value: raw.to_string(),
        })?;
        if labels.insert(id.clone(), label).is_some() {
            return Err(Error::DuplicateId { id });
        }
    }
    Ok(labels)
}

/// Compute corpus maxima and the per-class histogram.
///
/// Unlabeled samples contribute to `total` but not to `class_counts`.
pub fn compute_stats(corpus: &[ImageSample]) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut class_counts: BTreeMap<ClassLabel, usize> = BTreeMap::new();
    let mut max_height = 0;
    let mut max_width = 0;
    for sample in corpus {
        max_height = max_height.max(sample.height());
        max_width = max_width.max(sample.width());
        if let Some(label) = sample.label {
            *class_counts.entry(label).or_insert(0) += 1;
        }
    }
    Ok(CorpusStats {
        max_height,
        max_width,
        class_counts,
        total: corpus.len(),
    })
}

/// Split a fully labeled corpus into train and validation parts.
///
/// With `stratified = true` each class contributes `round(count * fraction)`
/// samples to validation, clamped so both sides keep at least one sample per
/// class. Identical inputs and seed give a byte-identical partition.
pub fn stratified_split(
    corpus: &[ImageSample],
    spec: &SplitSpec,
) -> Result<(Vec<ImageSample>, Vec<ImageSample>)> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for sample in corpus {
        if sample.label.is_none() {
            return Err(Error::UnlabeledSample {
                id: sample.id.clone(),
            });
        }
    }
    if !(spec.validation_fraction > 0.0 && spec.validation_fraction < 1.0) {
        return Err(Error::InvalidSpec(format!(
            "validation_fraction must be in (0, 1), got {}",
            spec.validation_fraction
        )));
    }
    let mut by_class: BTreeMap<ClassLabel, Vec<usize>> = BTreeMap::new();
    for (i, sample) in corpus.iter().enumerate() {
        by_class
            .entry(sample.label.expect("checked above"))
            .or_default()
            .push(i);
    }
    for (class, indices) in &by_class {
        if indices.len() < 2 {
            return Err(Error::ClassTooSmall {
                class: class.value(),
                count: indices.len(),
                need: 2,
            });
        }
    }

    let mut train = Vec::new();
    let mut validation = Vec::new();
    if spec.stratified {
        for (class, mut indices) in by_class {
            let mut rng =
                ChaCha8Rng::seed_from_u64(crate::derive_seed(spec.seed, "split", class.index() as u64));
            indices.shuffle(&mut rng);
            let val_count = validation_count(indices.len(), spec.validation_fraction);
            for (k, idx) in indices.into_iter().enumerate() {
                if k < val_count {
                    validation.push(idx);
                } else {
                    train.push(idx);
                }
            }
        }
    } else {
        let mut indices: Vec<usize> = (0..corpus.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(spec.seed, "split", u64::MAX));
        indices.shuffle(&mut rng);
        let val_count = validation_count(indices.len(), spec.validation_fraction);
        validation.extend(indices.iter().take(val_count).copied());
        train.extend(indices.iter().skip(val_count).copied());
    }

    // Deterministic output order within each side.
    train.sort_unstable();
    validation.sort_unstable();
    let take = |ids: Vec<usize>| ids.into_iter().map(|i| corpus[i].clone()).collect();
    Ok((take(train), take(validation)))
}

/// Validation share: `round(count * fraction)`, clamped to [1, count - 1].
fn validation_count(count: usize, fraction: f64) -> usize {
    let rounded = (count as f64 * fraction).round() as usize;
    rounded.clamp(1, count - 1)
}
