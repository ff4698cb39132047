//! Throughput benchmarks for the pipeline's hot stages: padding, jitter,
//! classifier forward passes, and F1 scoring.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use histopad_core::augment::{
    apply_jitter, pad_to, JitterDraw, JitterSpec, PaddingSpec, Placement,
};
use histopad_core::corpus::ImageSample;
use histopad_core::ensemble::Prediction;
use histopad_core::eval::{confusion, f1_report};
use histopad_core::model::{build_classifier, BackboneSpec};
use histopad_core::ClassLabel;
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(rng: &mut ChaCha8Rng, h: u32, w: u32) -> ImageSample {
    let img = RgbImage::from_fn(w, h, |_, _| Rgb([rng.gen(), rng.gen(), rng.gen()]));
    ImageSample::new("bench", img, Some(ClassLabel::NEG)).unwrap()
}

fn bench_padding(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let image = sample(&mut rng, 180, 140);
    let spec = PaddingSpec {
        target_height: 256,
        target_width: 256,
        fill: [255, 255, 255],
        placement: Placement::Center,
    };
    c.bench_function("pad_180x140_to_256", |b| {
        b.iter(|| pad_to(black_box(&image), black_box(&spec)).unwrap())
    });
}

fn bench_jitter(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let image = sample(&mut rng, 128, 128);
    let spec = JitterSpec::mild(7);
    c.bench_function("jitter_128x128", |b| {
        b.iter(|| {
            let draw = JitterDraw::for_copy(&spec, "bench", 0);
            apply_jitter(black_box(&image), black_box(&spec), draw)
        })
    });
}

fn bench_forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tiny = build_classifier(&BackboneSpec::tiny(), 3, 5).unwrap();
    let batch: Vec<ImageSample> = (0..8).map(|_| sample(&mut rng, 64, 64)).collect();
    c.bench_function("tiny_test_net_forward_8x64x64", |b| {
        b.iter(|| tiny.forward(black_box(&batch)).unwrap())
    });

    let resnet = build_classifier(
        &BackboneSpec::named("resnet34").unwrap().with_pretrained(false),
        3,
        5,
    )
    .unwrap();
    let one: Vec<ImageSample> = vec![sample(&mut rng, 64, 64)];
    c.bench_function("resnet34_forward_1x64x64", |b| {
        b.iter(|| resnet.forward(black_box(&one)).unwrap())
    });
}

fn bench_scoring(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth: Vec<ClassLabel> = (0..1000)
        .map(|_| ClassLabel::ALL[rng.gen_range(0..3)])
        .collect();
    let pred: Vec<ClassLabel> = (0..1000)
        .map(|_| ClassLabel::ALL[rng.gen_range(0..3)])
        .collect();
    c.bench_function("f1_report_1000", |b| {
        b.iter(|| f1_report(&confusion(black_box(&truth), black_box(&pred)).unwrap()))
    });

    let rows: Vec<[f64; 3]> = (0..5)
        .map(|_| {
            let raw = [rng.gen_range(0.01..1.0), rng.gen_range(0.01..1.0), rng.gen_range(0.01..1.0)];
            let sum: f64 = raw.iter().sum();
            [raw[0] / sum, raw[1] / sum, raw[2] / sum]
        })
        .collect();
    c.bench_function("ensemble_average_5_members", |b| {
        b.iter(|| Prediction::from_member_probs("x", black_box(rows.clone())).unwrap())
    });
}

criterion_group!(benches, bench_padding, bench_jitter, bench_forward, bench_scoring);
criterion_main!(benches);
