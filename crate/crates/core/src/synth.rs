//! Synthetic 3-class image corpora with class-correlated color statistics,
//! variable sizes, and configurable imbalance. Used by tests, benchmarks, and
//! for generating disk fixtures exercising the dataset layout.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::ImageSample;
use crate::{derive_seed, ClassLabel, Error, Result};

/// Shape of a generated corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    /// Samples per class in label order (-1, 0, 1).
    pub counts: [usize; 3],
    pub min_size: u32,
    pub max_size: u32,
    pub seed: u64,
    /// Gaussian per-pixel noise, in 8-bit channel units.
    pub pixel_noise: f64,
    /// Uniform per-image shift of the class color, in 8-bit channel units.
    pub mean_shift: f64,
}

impl SynthSpec {
    pub fn new(counts: [usize; 3], min_size: u32, max_size: u32, seed: u64) -> Self {
        Self {
            counts,
            min_size,
            max_size,
            seed,
            pixel_noise: 14.0,
            mean_shift: 18.0,
        }
    }
}

/// Base color per class: distinct hues so mean color statistics separate the
/// classes by construction.
fn class_color(class: ClassLabel) -> [f64; 3] {
    match class.index() {
        0 => [205.0, 75.0, 80.0],
        1 => [75.0, 195.0, 90.0],
        _ => [80.0, 90.0, 205.0],
    }
}

/// Generate a deterministic corpus: random sizes in [min_size, max_size],
/// per-class base colors with per-image shifts, per-pixel noise, and a few
/// darker elliptical blobs for texture.
pub fn generate_corpus(spec: &SynthSpec) -> Result<Vec<ImageSample>> {
    if spec.min_size < 1 || spec.max_size < spec.min_size {
        return Err(Error::InvalidSpec(format!(
            "bad size range [{}, {}]",
            spec.min_size, spec.max_size
        )));
    }
    if spec.counts.iter().all(|&c| c == 0) {
        return Err(Error::EmptyCorpus);
    }
    let mut labels = Vec::new();
    for (class, &count) in ClassLabel::ALL.iter().zip(&spec.counts) {
        labels.extend(std::iter::repeat_n(*class, count));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synth-order", 0));
    labels.shuffle(&mut rng);

    labels
        .into_iter()
        .enumerate()
        .map(|(index, label)| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synth-image", index as u64));
            let h = rng.gen_range(spec.min_size..=spec.max_size);
            let w = rng.gen_range(spec.min_size..=spec.max_size);
            let base = class_color(label);
            let shift: [f64; 3] = [
                rng.gen_range(-spec.mean_shift..=spec.mean_shift),
                rng.gen_range(-spec.mean_shift..=spec.mean_shift),
                rng.gen_range(-spec.mean_shift..=spec.mean_shift),
            ];

            // A few darker blobs so images are not flat color fields.
            let blob_count = rng.gen_range(2..=4);
            let blobs: Vec<(f64, f64, f64)> = (0..blob_count)
                .map(|_| {
                    (
                        rng.gen_range(0.0..h as f64),
                        rng.gen_range(0.0..w as f64),
                        rng.gen_range(2.0..(h.min(w) as f64 / 2.0).max(2.5)),
                    )
                })
                .collect();

            let mut img = RgbImage::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    let in_blob = blobs.iter().any(|&(by, bx, r)| {
                        let dy = y as f64 - by;
                        let dx = x as f64 - bx;
                        dy * dy + dx * dx <= r * r
                    });
                    let darken = if in_blob { 0.6 } else { 1.0 };
                    let mut px = [0u8; 3];
                    for c in 0..3 {
                        let noise = gaussian(&mut rng) * spec.pixel_noise;
                        let v = (base[c] + shift[c]) * darken + noise;
                        px[c] = v.round().clamp(0.0, 255.0) as u8;
                    }
                    img.put_pixel(x, y, Rgb(px));
                }
            }
            ImageSample::new(format!("s{index:04}"), img, Some(label))
        })
        .collect()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on two uniform draws.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Write a corpus to the on-disk dataset layout: `<root>/images/<id>.png`
/// plus `<root>/labels.csv` when `with_labels` is set.
pub fn write_fixture(root: &Path, corpus: &[ImageSample], with_labels: bool) -> Result<()> {
    let images = root.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    for sample in corpus {
        let path = images.join(format!("{}.png", sample.id));
        sample.pixels.save(&path).map_err(|e| {
            Error::io(&path, std::io::Error::other(e.to_string()))
        })?;
    }
    if with_labels {
        let mut table = String::from("id,label\n");
        for sample in corpus {
            if let Some(label) = sample.label {
                table.push_str(&format!("{},{}\n", sample.id, label));
            }
        }
        let path = root.join("labels.csv");
        std::fs::write(&path, table).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
