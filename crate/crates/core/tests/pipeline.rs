//! End-to-end flows through the filesystem: loading the dataset layout,
//! training, predicting, and scoring on synthetic fixtures.

use histopad_core::augment::JitterSpec;
use histopad_core::corpus::{compute_stats, load_corpus};
use histopad_core::ensemble::predict;
use histopad_core::eval::{confusion, f1_report, write_submission};
use histopad_core::model::{build_classifier, BackboneSpec, EnsembleSpec};
use histopad_core::synth::{generate_corpus, write_fixture, SynthSpec};
use histopad_core::train::{
    prepare_training_data, train_ensemble, train_member, SelectionMode, TrainConfig, TrainOptions,
};
use histopad_core::{ClassLabel, Error};
use image::{ImageBuffer, Luma, Rgb, RgbImage};
use histopad_core::corpus::ImageSample;

#[test]
fn loads_the_imbalanced_fixture_with_all_labels() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&SynthSpec::new([36, 14, 12], 6, 14, 3)).unwrap();
    write_fixture(dir.path(), &corpus, true).unwrap();

    let loaded = load_corpus(dir.path(), None).unwrap();
    assert_eq!(loaded.len(), 62);
    assert!(loaded.iter().all(|s| s.label.is_some()));

    // Lexicographic id ordering is part of the contract.
    let ids: Vec<&str> = loaded.iter().map(|s| s.id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort_unstable();
    assert_eq!(ids, sorted);

    // Brute-force consistency: per-class counts equal direct counting over
    // the raw label file.
    let labels_text = std::fs::read_to_string(dir.path().join("labels.csv")).unwrap();
    for (class, expected) in [("-1", 36), ("0", 14), ("1", 12)] {
        let brute = labels_text
            .lines()
            .skip(1)
            .filter(|l| l.ends_with(&format!(",{class}")))
            .count();
        assert_eq!(brute, expected);
        let stats = compute_stats(&loaded).unwrap();
        assert_eq!(
            stats.count(ClassLabel::parse(class).unwrap()),
            expected
        );
    }

    // Brute-force maxima over the decoded files.
    let stats = compute_stats(&loaded).unwrap();
    let max_h = loaded.iter().map(|s| s.height()).max().unwrap();
    let max_w = loaded.iter().map(|s| s.width()).max().unwrap();
    assert_eq!((stats.max_height, stats.max_width), (max_h, max_w));
}

#[test]
fn loads_unlabeled_corpus_when_no_labels_table_exists() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&SynthSpec::new([2, 2, 1], 4, 8, 9)).unwrap();
    write_fixture(dir.path(), &corpus, false).unwrap();

    let loaded = load_corpus(dir.path(), None).unwrap();
    assert_eq!(loaded.len(), 5);
    assert!(loaded.iter().all(|s| s.label.is_none()));
}

#[test]
fn empty_labels_table_loads_all_label_absent() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&SynthSpec::new([2, 2, 1], 4, 8, 9)).unwrap();
    write_fixture(dir.path(), &corpus, false).unwrap();
    std::fs::write(dir.path().join("labels.csv"), "id,label\n").unwrap();

    let loaded = load_corpus(dir.path(), None).unwrap();
    assert_eq!(loaded.len(), 5);
    assert!(loaded.iter().all(|s| s.label.is_none()));
}

#[test]
fn load_errors_name_the_offending_sample() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&SynthSpec::new([2, 2, 2], 4, 8, 1)).unwrap();
    write_fixture(dir.path(), &corpus, true).unwrap();

    // Out-of-domain label.
    let labels = dir.path().join("labels.csv");
    std::fs::write(&labels, "id,label\ns0000,2\n").unwrap();
    match load_corpus(dir.path(), None) {
        Err(Error::InvalidLabel { id, value }) => {
            assert_eq!(id, "s0000");
            assert_eq!(value, "2");
        }
        other => panic!("expected InvalidLabel, got {other:?}"),
    }

    // Label row referencing a file that is not there.
    std::fs::write(&labels, "id,label\nimg_7,1\n").unwrap();
    match load_corpus(dir.path(), None) {
        Err(Error::LabelWithoutImage { id, .. }) => assert_eq!(id, "img_7"),
        other => panic!("expected LabelWithoutImage, got {other:?}"),
    }

    // Corrupt image file.
    std::fs::write(&labels, "id,label\ns0000,1\n").unwrap();
    std::fs::write(dir.path().join("images/s0000.png"), b"not a png").unwrap();
    match load_corpus(dir.path(), None) {
        Err(Error::ImageDecode { id, .. }) => assert_eq!(id, "s0000"),
        other => panic!("expected ImageDecode, got {other:?}"),
    }

    // Missing dataset directory.
    assert!(matches!(
        load_corpus(&dir.path().join("nope"), None),
        Err(Error::MissingDirectory { .. })
    ));
}

#[test]
fn duplicate_stems_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    std::fs::create_dir_all(&images).unwrap();
    let img = RgbImage::from_pixel(4, 4, Rgb([1, 2, 3]));
    img.save(images.join("a.png")).unwrap();
    img.save(images.join("a.jpg")).unwrap();
    assert!(matches!(
        load_corpus(dir.path(), None),
        Err(Error::DuplicateId { .. })
    ));
}

#[test]
fn grayscale_images_are_channel_replicated() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    std::fs::create_dir_all(&images).unwrap();
    let gray: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_fn(5, 4, |x, y| Luma([(x * 20 + y * 11) as u8]));
    gray.save(images.join("g.png")).unwrap();

    let loaded = load_corpus(dir.path(), None).unwrap();
    assert_eq!(loaded.len(), 1);
    for p in loaded[0].pixels.pixels() {
        assert_eq!(p[0], p[1]);
        assert_eq!(p[1], p[2]);
    }
}

/// A linearly separable 12-sample set must be fit by the offline backbone:
/// the run is its own oracle (final loss under initial loss).
#[test]
fn tiny_net_fits_separable_data() {
    let mut train_set = Vec::new();
    for i in 0..4 {
        for (class, color) in [
            (ClassLabel::NEG, [230u8, 20, 20]),
            (ClassLabel::ZERO, [20, 230, 20]),
            (ClassLabel::ONE, [20, 20, 230]),
        ] {
            let img = RgbImage::from_pixel(12, 12, Rgb(color));
            train_set
                .push(ImageSample::new(format!("{class}_{i}"), img, Some(class)).unwrap());
        }
    }
    let config = TrainConfig {
        epochs: 100,
        batch_size: 4,
        seed: 5,
        selection_mode: SelectionMode::TrainingLoss,
        ..TrainConfig::default()
    };
    let classifier = build_classifier(&BackboneSpec::tiny(), 3, 2).unwrap();
    let padding = histopad_core::augment::PaddingSpec {
        target_height: 12,
        target_width: 12,
        fill: [255, 255, 255],
        placement: histopad_core::augment::Placement::Center,
    };
    let outcome = train_member(classifier, &train_set, &[], &config, 0, &padding).unwrap();
    let first = outcome.log.first().unwrap().train_loss;
    let last = outcome.log.last().unwrap().train_loss;
    assert!(
        last < first,
        "training did not reduce loss: first {first}, last {last}"
    );
    assert!(outcome.checkpoint.best_loss <= first);
}

#[test]
fn train_predict_score_round_trip() {
    let corpus = generate_corpus(&SynthSpec::new([10, 6, 5], 10, 18, 21)).unwrap();
    let jitter = JitterSpec::mild(4);
    let config = TrainConfig {
        epochs: 6,
        batch_size: 8,
        seed: 13,
        validation_fraction: 0.25,
        ..TrainConfig::default()
    };
    let outcomes = train_ensemble(&EnsembleSpec::tiny(2), &corpus, &jitter, &config).unwrap();
    let checkpoints: Vec<_> = outcomes.iter().map(|o| o.checkpoint.clone()).collect();

    let prepared = prepare_training_data(&corpus, &jitter, &config, &TrainOptions::default())
        .unwrap();
    let predictions = predict(&checkpoints, &prepared.validation).unwrap();
    assert_eq!(predictions.len(), prepared.validation.len());
    for (p, s) in predictions.iter().zip(&prepared.validation) {
        assert_eq!(p.id, s.id);
        assert_eq!(p.per_member_probs.len(), 2);
        let sum: f64 = p.mean_probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    let truth: Vec<ClassLabel> = prepared.validation.iter().map(|s| s.label.unwrap()).collect();
    let labels: Vec<ClassLabel> = predictions.iter().map(|p| p.label).collect();
    let report = f1_report(&confusion(&truth, &labels).unwrap());
    assert!(report.macro_f1.is_finite());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("submission.csv");
    write_submission(&predictions, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), predictions.len() + 1);
    assert!(text.starts_with("id,malignant\n"));
    assert!(text.ends_with('\n'));
}

#[test]
fn predict_rejects_incompatible_or_unpadded_inputs() {
    let corpus = generate_corpus(&SynthSpec::new([4, 3, 3], 8, 12, 31)).unwrap();
    let jitter = JitterSpec::mild(4);
    let config = TrainConfig {
        epochs: 1,
        batch_size: 4,
        seed: 1,
        validation_fraction: 0.3,
        ..TrainConfig::default()
    };
    let outcomes = train_ensemble(&EnsembleSpec::tiny(2), &corpus, &jitter, &config).unwrap();
    let mut checkpoints: Vec<_> = outcomes.iter().map(|o| o.checkpoint.clone()).collect();

    // Unpadded input: raw corpus images are smaller than the target.
    let err = predict(&checkpoints, &corpus[..1]).unwrap_err();
    assert!(matches!(err, Error::UnpaddedInput { .. }));

    // Mismatched padding targets across members.
    checkpoints[1].padding.target_width += 2;
    let prepared =
        prepare_training_data(&corpus, &jitter, &config, &TrainOptions::default()).unwrap();
    let err = predict(&checkpoints, &prepared.validation).unwrap_err();
    match err {
        Error::IncompatibleCheckpoints { msg } => {
            assert!(msg.contains("padding target"), "{msg}");
        }
        other => panic!("expected IncompatibleCheckpoints, got {other:?}"),
    }
}
