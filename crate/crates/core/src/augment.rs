//! Padding to corpus-maximum dimensions and jitter-based class balancing.
//!
//! Two data-level devices keep every original pixel intact while making the
//! corpus usable for batched training:
//!
//! - [`pad_to`] enlarges an image to target dimensions with a fill color, so
//!   no content is cropped away and nothing is rescaled.
//! - [`balance_corpus`] equalizes class counts by materializing photometrically
//!   jittered copies of minority-class samples until every class matches the
//!   majority count.
//!
//! Jitter is photometric only (brightness, contrast, saturation, hue); no
//! geometric transforms are applied anywhere in this module.

use std::collections::{BTreeMap, HashMap};

use image::RgbImage;
use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStats, ImageSample};
use crate::{derive_seed, ClassLabel, Error, Result};

/// Where the original content sits inside the padded canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Center,
    TopLeft,
}

/// Target canvas for [`pad_to`].
///
/// Defaults chosen for H&E-stained slides: white fill (slide background) and
/// centered placement, both overridable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaddingSpec {
    pub target_height: u32,
    pub target_width: u32,
    pub fill: [u8; 3],
    pub placement: Placement,
}

impl PaddingSpec {
    pub const DEFAULT_FILL: [u8; 3] = [255, 255, 255];

    /// Padding target covering every image counted in `stats`.
    pub fn from_stats(stats: &CorpusStats) -> Self {
        Self {
            target_height: stats.max_height,
            target_width: stats.max_width,
            fill: Self::DEFAULT_FILL,
            placement: Placement::Center,
        }
    }

    /// Row/column offset of the original content for an `height x width` image.
    pub fn offsets(&self, height: u32, width: u32) -> (u32, u32) {
        match self.placement {
            Placement::Center => (
                (self.target_height - height) / 2,
                (self.target_width - width) / 2,
            ),
            Placement::TopLeft => (0, 0),
        }
    }
}

/// Pad one image to the spec's target dimensions.
///
/// The original pixel grid appears verbatim at the placement offset; every
/// other pixel equals the fill color. Id and label are preserved: padding does
/// not create a new sample.
pub fn pad_to(image: &ImageSample, spec: &PaddingSpec) -> Result<ImageSample> {
    let (h, w) = (image.height(), image.width());
    if h > spec.target_height || w > spec.target_width {
        return Err(Error::ImageLargerThanTarget {
            id: image.id.clone(),
            height: h,
            width: w,
            target_height: spec.target_height,
            target_width: spec.target_width,
        });
    }
    let (row_off, col_off) = spec.offsets(h, w);
    let mut canvas = RgbImage::from_pixel(
        spec.target_width,
        spec.target_height,
        image::Rgb(spec.fill),
    );
    for (x, y, pixel) in image.pixels.enumerate_pixels() {
        canvas.put_pixel(x + col_off, y + row_off, *pixel);
    }
    ImageSample::new(image.id.clone(), canvas, image.label)
}

/// Crop the placement-offset window back out of a padded image. Inverse of
/// [`pad_to`] for the original dimensions; used by round-trip checks.
pub fn crop_back(padded: &ImageSample, spec: &PaddingSpec, height: u32, width: u32) -> RgbImage {
    let (row_off, col_off) = spec.offsets(height, width);
    let mut out = RgbImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            out.put_pixel(x, y, *padded.pixels.get_pixel(x + col_off, y + row_off));
        }
    }
    out
}

/// Photometric jitter ranges. A spec with all deltas zero is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterSpec {
    /// Max relative brightness change; factor drawn from [1-d, 1+d].
    pub brightness_delta: f64,
    pub contrast_delta: f64,
    pub saturation_delta: f64,
    /// Max hue rotation as a fraction of the hue circle, in [0, 0.5].
    pub hue_delta: f64,
    pub seed: u64,
}

impl JitterSpec {
    pub fn new(
        brightness_delta: f64,
        contrast_delta: f64,
        saturation_delta: f64,
        hue_delta: f64,
        seed: u64,
    ) -> Result<Self> {
        let spec = Self {
            brightness_delta,
            contrast_delta,
            saturation_delta,
            hue_delta,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Mild photometric defaults that keep stain colors recognizable.
    pub fn mild(seed: u64) -> Self {
        Self {
            brightness_delta: 0.2,
            contrast_delta: 0.2,
            saturation_delta: 0.2,
            hue_delta: 0.05,
            seed,
        }
    }

    pub fn identity(seed: u64) -> Self {
        Self {
            brightness_delta: 0.0,
            contrast_delta: 0.0,
            saturation_delta: 0.0,
            hue_delta: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("brightness_delta", self.brightness_delta),
            ("contrast_delta", self.contrast_delta),
            ("saturation_delta", self.saturation_delta),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !self.hue_delta.is_finite() || !(0.0..=0.5).contains(&self.hue_delta) {
            return Err(Error::InvalidSpec(format!(
                "hue_delta must be in [0, 0.5], got {}",
                self.hue_delta
            )));
        }
        Ok(())
    }
}

/// Random draw state for one jittered copy.
///
/// Derived from (spec seed, source id, copy index), so each copy owns an
/// independent stream and parallel generation equals sequential generation.
#[derive(Debug, Clone)]
pub struct JitterDraw {
    rng: ChaCha8Rng,
    copy_index: u64,
}

impl JitterDraw {
    pub fn for_copy(spec: &JitterSpec, source_id: &str, copy_index: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, source_id, copy_index)),
            copy_index,
        }
    }

    /// Id suffix marking this copy; appended to the source id.
    pub fn suffix(&self) -> String {
        format!("__aug{}", self.copy_index)
    }
}

/// The four factors of one jitter application, in application order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JitterFactors {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue_shift: f64,
}

impl JitterFactors {
    pub const IDENTITY: JitterFactors = JitterFactors {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        hue_shift: 0.0,
    };

    fn sample(spec: &JitterSpec, rng: &mut ChaCha8Rng) -> Self {
        let factor = |rng: &mut ChaCha8Rng, delta: f64| {
            Uniform::new_inclusive(1.0 - delta, 1.0 + delta).sample(rng)
        };
        let brightness = factor(rng, spec.brightness_delta);
        let contrast = factor(rng, spec.contrast_delta);
        let saturation = factor(rng, spec.saturation_delta);
        let hue_shift = Uniform::new_inclusive(-spec.hue_delta, spec.hue_delta).sample(rng);
        Self {
            brightness,
            contrast,
            saturation,
            hue_shift,
        }
    }

    /// Single-token description for manifests (no commas, so the manifest
    /// stays a plain 4-column table).
    pub fn describe(&self) -> String {
        format!(
            "jitter(b={:.6};c={:.6};s={:.6};h={:+.6})",
            self.brightness, self.contrast, self.saturation, self.hue_shift
        )
    }

    /// Apply brightness, contrast, saturation, then hue to an RGB image.
    ///
    /// Channels are clamped to [0, 255] after each step. Steps whose factor is
    /// exactly the identity are skipped, so a zero-delta spec reproduces the
    /// input bit-exactly.
    pub fn apply(&self, pixels: &RgbImage) -> RgbImage {
        let (w, h) = pixels.dimensions();
        let mut buf: Vec<[f64; 3]> = pixels
            .pixels()
            .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
            .collect();

        if self.brightness != 1.0 {
            for px in &mut buf {
                for v in px.iter_mut() {
                    *v = (*v * self.brightness).clamp(0.0, 255.0);
                }
            }
        }
        if self.contrast != 1.0 {
            let mean_luma = buf.iter().map(luminance).sum::<f64>() / buf.len() as f64;
            for px in &mut buf {
                for v in px.iter_mut() {
                    *v = (self.contrast * *v + (1.0 - self.contrast) * mean_luma)
                        .clamp(0.0, 255.0);
                }
            }
        }
        if self.saturation != 1.0 {
            for px in &mut buf {
                let gray = luminance(px);
                for v in px.iter_mut() {
                    *v = (self.saturation * *v + (1.0 - self.saturation) * gray).clamp(0.0, 255.0);
                }
            }
        }
        if self.hue_shift != 0.0 {
            for px in &mut buf {
                let (hue, sat, val) = rgb_to_hsv(px[0] / 255.0, px[1] / 255.0, px[2] / 255.0);
                let hue = (hue + self.hue_shift).rem_euclid(1.0);
                let (r, g, b) = hsv_to_rgb(hue, sat, val);
                *px = [
                    (r * 255.0).clamp(0.0, 255.0),
                    (g * 255.0).clamp(0.0, 255.0),
                    (b * 255.0).clamp(0.0, 255.0),
                ];
            }
        }

        let mut out = RgbImage::new(w, h);
        for (i, px) in buf.iter().enumerate() {
            let x = (i as u32) % w;
            let y = (i as u32) / w;
            out.put_pixel(
                x,
                y,
                image::Rgb([
                    px[0].round() as u8,
                    px[1].round() as u8,
                    px[2].round() as u8,
                ]),
            );
        }
        out
    }
}

fn luminance(px: &[f64; 3]) -> f64 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

/// RGB in [0,1] to HSV with hue in [0,1).
fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let value = max;
    let saturation = if max > 0.0 { delta / max } else { 0.0 };
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        (((g - b) / delta).rem_euclid(6.0)) / 6.0
    } else if max == g {
        (((b - r) / delta) + 2.0) / 6.0
    } else {
        (((r - g) / delta) + 4.0) / 6.0
    };
    (hue, saturation, value)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

/// Apply one jittered transform to an image, consuming the draw state.
///
/// The output keeps the input's dimensions and label; its id is the source id
/// plus the draw's copy suffix. Identical (image, spec, draw) always produce
/// identical output.
pub fn apply_jitter(image: &ImageSample, spec: &JitterSpec, mut draw: JitterDraw) -> ImageSample {
    let (sample, _) = apply_jitter_traced(image, spec, &mut draw);
    sample
}

/// Like [`apply_jitter`] but also reports the drawn factors, for provenance
/// manifests.
pub fn apply_jitter_traced(
    image: &ImageSample,
    spec: &JitterSpec,
    draw: &mut JitterDraw,
) -> (ImageSample, JitterFactors) {
    let factors = JitterFactors::sample(spec, &mut draw.rng);
    let pixels = factors.apply(&image.pixels);
    let sample = ImageSample {
        id: format!("{}{}", image.id, draw.suffix()),
        pixels,
        label: image.label,
    };
    (sample, factors)
}

/// One planned synthetic copy: which source to jitter and its per-source index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlannedCopy {
    pub class: ClassLabel,
    pub source_id: String,
    pub copy_index: u64,
}

/// How many copies each class needs and which sources supply them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OversamplePlan {
    pub additional_copies: BTreeMap<ClassLabel, usize>,
    pub copies: Vec<PlannedCopy>,
}

impl OversamplePlan {
    pub fn total_copies(&self) -> usize {
        self.copies.len()
    }
}

/// Plan how many jittered copies each minority class needs to match the
/// majority class, spreading copies as evenly as possible across same-class
/// sources (per-source counts differ by at most one).
pub fn plan_oversample(
    stats: &CorpusStats,
    corpus: &[ImageSample],
    seed: u64,
) -> Result<OversamplePlan> {
    if stats.class_counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let target = stats.majority_count();
    let mut additional_copies = BTreeMap::new();
    let mut copies = Vec::new();

    for (&class, &count) in &stats.class_counts {
        if count == 0 {
            return Err(Error::EmptyClass {
                class: class.value(),
            });
        }
        let mut sources: Vec<&str> = corpus
            .iter()
            .filter(|s| s.label == Some(class))
            .map(|s| s.id.as_str())
            .collect();
        if sources.is_empty() {
            return Err(Error::EmptyClass {
                class: class.value(),
            });
        }
        sources.sort_unstable();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, "oversample", class.index() as u64));
        sources.shuffle(&mut rng);

        let needed = target - count;
        additional_copies.insert(class, needed);
        for j in 0..needed {
            copies.push(PlannedCopy {
                class,
                source_id: sources[j % sources.len()].to_string(),
                copy_index: (j / sources.len()) as u64,
            });
        }
    }
    Ok(OversamplePlan {
        additional_copies,
        copies,
    })
}

/// Provenance of one sample in a balanced corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestRow {
    pub id: String,
    pub source_id: String,
    pub class: ClassLabel,
    pub transform: String,
}

/// Equalize class counts by appending jittered copies of minority-class
/// samples. Originals pass through unmodified, in input order, followed by the
/// synthetic copies; afterwards every class count equals the original
/// majority count.
pub fn balance_corpus(
    corpus: &[ImageSample],
    jitter: &JitterSpec,
    seed: u64,
) -> Result<Vec<ImageSample>> {
    balance_corpus_with_manifest(corpus, jitter, seed).map(|(samples, _)| samples)
}

/// [`balance_corpus`] plus a manifest row per output sample (originals marked
/// `original`, copies carrying their source id and drawn jitter factors).
pub fn balance_corpus_with_manifest(
    corpus: &[ImageSample],
    jitter: &JitterSpec,
    seed: u64,
) -> Result<(Vec<ImageSample>, Vec<ManifestRow>)> {
    jitter.validate()?;
    for sample in corpus {
        if sample.label.is_none() {
            return Err(Error::UnlabeledSample {
                id: sample.id.clone(),
            });
        }
    }
    let stats = crate::corpus::compute_stats(corpus)?;
    let plan = plan_oversample(&stats, corpus, seed)?;

    let by_id: HashMap<&str, &ImageSample> = corpus.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut samples = corpus.to_vec();
    let mut manifest: Vec<ManifestRow> = corpus
        .iter()
        .map(|s| ManifestRow {
            id: s.id.clone(),
            source_id: s.id.clone(),
            class: s.label.expect("checked above"),
            transform: "original".to_string(),
        })
        .collect();

    for copy in &plan.copies {
        let source = by_id
            .get(copy.source_id.as_str())
            .expect("plan draws from corpus ids");
        let mut draw = JitterDraw::for_copy(jitter, &copy.source_id, copy.copy_index);
        let (sample, factors) = apply_jitter_traced(source, jitter, &mut draw);
        manifest.push(ManifestRow {
            id: sample.id.clone(),
            source_id: copy.source_id.clone(),
            class: copy.class,
            transform: factors.describe(),
        });
        samples.push(sample);
    }

    let mut ids = BTreeMap::new();
    for s in &samples {
        if ids.insert(s.id.clone(), ()).is_some() {
            return Err(Error::DuplicateId { id: s.id.clone() });
        }
    }
    Ok((samples, manifest))
}
