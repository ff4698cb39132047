//! Property suites for the data-level invariants: padding round-trips,
//! jitter identity, balancing histograms, split partitions, softmax, F1
//! against a brute-force oracle, and ensemble averaging symmetries.

use std::collections::{BTreeMap, BTreeSet};

use histopad_core::augment::{
    apply_jitter, balance_corpus, crop_back, pad_to, JitterDraw, JitterSpec, PaddingSpec,
    Placement,
};
use histopad_core::corpus::{compute_stats, stratified_split, ImageSample, SplitSpec};
use histopad_core::ensemble::Prediction;
use histopad_core::eval::{confusion, f1_report};
use histopad_core::model::softmax;
use histopad_core::train::select_best;
use histopad_core::ClassLabel;
use image::RgbImage;
use proptest::prelude::*;

fn arb_image(max: u32) -> impl Strategy<Value = RgbImage> {
    (1..=max, 1..=max, any::<u64>()).prop_map(|(h, w, seed)| {
        RgbImage::from_fn(w, h, |x, y| {
            let v = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add((x as u64) << 17 ^ (y as u64) << 3);
            image::Rgb([(v >> 8) as u8, (v >> 24) as u8, (v >> 40) as u8])
        })
    })
}

fn arb_placement() -> impl Strategy<Value = Placement> {
    prop_oneof![Just(Placement::Center), Just(Placement::TopLeft)]
}

fn label_strategy() -> impl Strategy<Value = ClassLabel> {
    prop_oneof![
        Just(ClassLabel::NEG),
        Just(ClassLabel::ZERO),
        Just(ClassLabel::ONE)
    ]
}

proptest! {
    /// Cropping the padded image at the placement offset recovers the
    /// original bit-exactly; every pixel outside the window is the fill.
    #[test]
    fn padding_round_trips_and_keeps_features(
        img in arb_image(24),
        extra_h in 0u32..12,
        extra_w in 0u32..12,
        fill in any::<[u8; 3]>(),
        placement in arb_placement(),
    ) {
        let sample = ImageSample::new("p", img.clone(), None).unwrap();
        let spec = PaddingSpec {
            target_height: img.height() + extra_h,
            target_width: img.width() + extra_w,
            fill,
            placement,
        };
        let padded = pad_to(&sample, &spec).unwrap();
        prop_assert_eq!(padded.height(), spec.target_height);
        prop_assert_eq!(padded.width(), spec.target_width);

        let recovered = crop_back(&padded, &spec, img.height(), img.width());
        prop_assert_eq!(&recovered, &img);

        let (row_off, col_off) = spec.offsets(img.height(), img.width());
        for y in 0..spec.target_height {
            for x in 0..spec.target_width {
                let inside = y >= row_off
                    && y < row_off + img.height()
                    && x >= col_off
                    && x < col_off + img.width();
                if !inside {
                    prop_assert_eq!(padded.pixels.get_pixel(x, y).0, fill);
                }
            }
        }
    }

    /// Zero-delta jitter is the identity and jitter preserves geometry.
    #[test]
    fn jitter_identity_and_shape(img in arb_image(16), seed in any::<u64>(), copy in 0u64..4) {
        let sample = ImageSample::new("j", img, Some(ClassLabel::ZERO)).unwrap();
        let identity = JitterSpec::identity(seed);
        let out = apply_jitter(&sample, &identity, JitterDraw::for_copy(&identity, "j", copy));
        prop_assert_eq!(&out.pixels, &sample.pixels);

        let mild = JitterSpec::mild(seed);
        let out = apply_jitter(&sample, &mild, JitterDraw::for_copy(&mild, "j", copy));
        prop_assert_eq!(out.height(), sample.height());
        prop_assert_eq!(out.width(), sample.width());
        prop_assert_eq!(out.label, sample.label);
    }

    /// Balancing yields a uniform histogram at the majority count and keeps
    /// the originals untouched, for arbitrary imbalanced corpora.
    #[test]
    fn balancing_equalizes_class_counts(
        counts in [1usize..8, 1usize..8, 1usize..8],
        seed in any::<u64>(),
    ) {
        let mut corpus = Vec::new();
        for (class, &count) in ClassLabel::ALL.iter().zip(&counts) {
            for i in 0..count {
                let img = RgbImage::from_pixel(5, 4, image::Rgb([i as u8 * 9, 100, 200]));
                corpus.push(ImageSample::new(format!("{class}_{i}"), img, Some(*class)).unwrap());
            }
        }
        let jitter = JitterSpec::mild(seed);
        let balanced = balance_corpus(&corpus, &jitter, seed).unwrap();

        let majority = *counts.iter().max().unwrap();
        prop_assert_eq!(balanced.len(), majority * 3);
        for class in ClassLabel::ALL {
            prop_assert_eq!(
                balanced.iter().filter(|s| s.label == Some(class)).count(),
                majority
            );
        }
        prop_assert_eq!(&balanced[..corpus.len()], &corpus[..]);

        let ids: BTreeSet<&str> = balanced.iter().map(|s| s.id.as_str()).collect();
        prop_assert_eq!(ids.len(), balanced.len());
    }

    /// Splits partition the corpus: disjoint ids, union equals input.
    #[test]
    fn split_is_a_partition(
        counts in [2usize..10, 2usize..10, 2usize..10],
        fraction in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let mut corpus = Vec::new();
        for (class, &count) in ClassLabel::ALL.iter().zip(&counts) {
            for i in 0..count {
                let img = RgbImage::from_pixel(3, 3, image::Rgb([0, 0, 0]));
                corpus.push(ImageSample::new(format!("{class}_{i}"), img, Some(*class)).unwrap());
            }
        }
        let spec = SplitSpec { validation_fraction: fraction, seed, stratified: true };
        let (train, validation) = stratified_split(&corpus, &spec).unwrap();

        prop_assert_eq!(train.len() + validation.len(), corpus.len());
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for s in train.iter().chain(&validation) {
            prop_assert!(seen.insert(s.id.clone()), "duplicate id {}", s.id);
        }
        let input_ids: BTreeSet<String> = corpus.iter().map(|s| s.id.clone()).collect();
        prop_assert_eq!(seen, input_ids);

        // Per-class share within one sample of the requested fraction.
        for (class, &count) in ClassLabel::ALL.iter().zip(&counts) {
            let val = validation.iter().filter(|s| s.label == Some(*class)).count();
            prop_assert!((val as f64 - count as f64 * fraction).abs() <= 1.0);
        }
    }

    /// Softmax output is a probability vector and preserves the argmax.
    #[test]
    fn softmax_properties(scores in prop::collection::vec(-50.0f64..50.0, 3)) {
        let probs = softmax(&scores).unwrap();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(probs.iter().all(|p| *p > 0.0));
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        prop_assert_eq!(argmax(&scores), argmax(&probs));
    }

    /// f1_report agrees with direct TP/FP/FN counting over the label lists.
    #[test]
    fn f1_matches_brute_force_oracle(
        pairs in prop::collection::vec((label_strategy(), label_strategy()), 1..200),
    ) {
        let truth: Vec<ClassLabel> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<ClassLabel> = pairs.iter().map(|p| p.1).collect();
        let report = f1_report(&confusion(&truth, &pred).unwrap());

        let oracle = brute_force_f1(&truth, &pred);
        for class in ClassLabel::ALL {
            prop_assert!((report.per_class_f1[&class] - oracle[&class]).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&report.per_class_f1[&class]));
        }
        let oracle_macro = oracle.values().sum::<f64>() / 3.0;
        prop_assert!((report.macro_f1 - oracle_macro).abs() < 1e-12);
    }

    /// Macro F1 is invariant under a consistent relabeling of both lists.
    #[test]
    fn macro_f1_relabeling_invariance(
        pairs in prop::collection::vec((label_strategy(), label_strategy()), 1..100),
        perm in Just([1i64, -1, 0]),
    ) {
        let relabel = |l: ClassLabel| ClassLabel::new(perm[l.index()]).unwrap();
        let truth: Vec<ClassLabel> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<ClassLabel> = pairs.iter().map(|p| p.1).collect();
        let base = f1_report(&confusion(&truth, &pred).unwrap()).macro_f1;

        let truth2: Vec<ClassLabel> = truth.iter().map(|&l| relabel(l)).collect();
        let pred2: Vec<ClassLabel> = pred.iter().map(|&l| relabel(l)).collect();
        let permuted = f1_report(&confusion(&truth2, &pred2).unwrap()).macro_f1;
        prop_assert!((base - permuted).abs() < 1e-12);
    }

    /// Ensemble means are valid probability vectors, invariant (to 1e-12)
    /// under member permutation and exactly label-invariant under replication.
    #[test]
    fn ensemble_mean_symmetries(
        raw in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 1..6),
        rotation in 0usize..5,
        dup in 1usize..4,
    ) {
        let rows: Vec<[f64; 3]> = raw
            .iter()
            .map(|r| {
                let total: f64 = r.iter().sum();
                [r[0] / total, r[1] / total, r[2] / total]
            })
            .collect();
        let p = Prediction::from_member_probs("x", rows.clone()).unwrap();
        prop_assert!((p.mean_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.mean_probs.iter().all(|v| *v >= 0.0));

        let mut rotated = rows.clone();
        rotated.rotate_left(rotation % rows.len());
        let q = Prediction::from_member_probs("x", rotated).unwrap();
        for (a, b) in p.mean_probs.iter().zip(&q.mean_probs) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert_eq!(p.label, q.label);

        let replicated: Vec<[f64; 3]> =
            std::iter::repeat_n(rows.clone(), dup).flatten().collect();
        let r = Prediction::from_member_probs("x", replicated).unwrap();
        prop_assert_eq!(p.label, r.label);
    }

    /// Checkpoint selection equals a brute-force scan for the earliest min.
    #[test]
    fn selection_matches_brute_force(losses in prop::collection::vec(0.0f64..10.0, 1..50)) {
        let (epoch, loss) = select_best(&losses).unwrap();
        let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
        let first_idx = losses.iter().position(|&l| l == min).unwrap();
        prop_assert_eq!(epoch, first_idx + 1);
        prop_assert_eq!(loss, min);
    }
}

/// Independent per-class F1 straight from the label lists.
fn brute_force_f1(truth: &[ClassLabel], pred: &[ClassLabel]) -> BTreeMap<ClassLabel, f64> {
    let mut out = BTreeMap::new();
    for class in ClassLabel::ALL {
        let tp = truth
            .iter()
            .zip(pred)
            .filter(|(t, p)| **t == class && **p == class)
            .count() as f64;
        let fp = truth
            .iter()
            .zip(pred)
            .filter(|(t, p)| **t != class && **p == class)
            .count() as f64;
        let fn_ = truth
            .iter()
            .zip(pred)
            .filter(|(t, p)| **t == class && **p != class)
            .count() as f64;
        let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
        let recall = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        out.insert(class, f1);
    }
    out
}

/// The three-class stats example from the balancing arithmetic: oversampling
/// never draws across classes even when sources are heavily skewed.
#[test]
fn balance_traces_stay_within_class() {
    let mut corpus = Vec::new();
    for (class, count) in [(ClassLabel::NEG, 9), (ClassLabel::ZERO, 2), (ClassLabel::ONE, 5)] {
        for i in 0..count {
            let img = RgbImage::from_pixel(6, 6, image::Rgb([40, 90, 170]));
            corpus.push(ImageSample::new(format!("{class}_{i}"), img, Some(class)).unwrap());
        }
    }
    let stats = compute_stats(&corpus).unwrap();
    let plan = histopad_core::augment::plan_oversample(&stats, &corpus, 77).unwrap();
    for copy in &plan.copies {
        let source = corpus.iter().find(|s| s.id == copy.source_id).unwrap();
        assert_eq!(source.label, Some(copy.class));
    }
}
