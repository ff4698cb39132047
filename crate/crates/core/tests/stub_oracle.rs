//! Independent re-implementation of the offline backbone's forward pass,
//! checked against the library's classifier on a fixed image with fixed
//! weights. The oracle below shares no code with the nn module: plain loops
//! over the extracted parameter tensors.

#![allow(clippy::needless_range_loop)]

use histopad_core::corpus::ImageSample;
use histopad_core::ensemble::predict;
use histopad_core::model::{build_classifier, softmax, BackboneSpec};
use histopad_core::nn::NamedTensor;
use histopad_core::train::Checkpoint;
use histopad_core::augment::{PaddingSpec, Placement};
use image::{Rgb, RgbImage};

type Plane = Vec<Vec<f64>>;

fn conv3x3_same(input: &[Plane], weight: &NamedTensor, bias: &NamedTensor) -> Vec<Plane> {
    let out_ch = weight.shape[0];
    let in_ch = weight.shape[1];
    assert_eq!(weight.shape[2], 3);
    let h = input[0].len();
    let w = input[0][0].len();
    let weight_at = |oc: usize, ic: usize, ky: usize, kx: usize| {
        weight.data[((oc * in_ch + ic) * 3 + ky) * 3 + kx]
    };
    (0..out_ch)
        .map(|oc| {
            let mut plane = vec![vec![0.0; w]; h];
            for (y, row) in plane.iter_mut().enumerate() {
                for (x, cell) in row.iter_mut().enumerate() {
                    let mut acc = bias.data[oc];
                    for ic in 0..in_ch {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = y as isize + ky as isize - 1;
                                let ix = x as isize + kx as isize - 1;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += input[ic][iy as usize][ix as usize]
                                    * weight_at(oc, ic, ky, kx);
                            }
                        }
                    }
                    *cell = acc;
                }
            }
            plane
        })
        .collect()
}

fn relu(planes: &mut [Plane]) {
    for plane in planes {
        for row in plane {
            for v in row {
                *v = v.max(0.0);
            }
        }
    }
}

fn maxpool2(planes: &[Plane]) -> Vec<Plane> {
    planes
        .iter()
        .map(|plane| {
            let oh = plane.len() / 2;
            let ow = plane[0].len() / 2;
            (0..oh)
                .map(|y| {
                    (0..ow)
                        .map(|x| {
                            plane[2 * y][2 * x]
                                .max(plane[2 * y][2 * x + 1])
                                .max(plane[2 * y + 1][2 * x])
                                .max(plane[2 * y + 1][2 * x + 1])
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn global_mean(planes: &[Plane]) -> Vec<f64> {
    planes
        .iter()
        .map(|plane| {
            let count = (plane.len() * plane[0].len()) as f64;
            plane.iter().flatten().sum::<f64>() / count
        })
        .collect()
}

#[test]
fn stub_forward_matches_hand_run_arithmetic() {
    let classifier = build_classifier(&BackboneSpec::tiny(), 3, 314).unwrap();
    let state = classifier.state_tensors();
    // Layout: conv1 (w, b), conv2 (w, b), head (w, b).
    assert_eq!(state.len(), 6);
    let (c1w, c1b, c2w, c2b, head_w, head_b) =
        (&state[0], &state[1], &state[2], &state[3], &state[4], &state[5]);

    let image = RgbImage::from_fn(12, 10, |x, y| {
        Rgb([
            ((x * 23 + y * 7) % 256) as u8,
            ((x * 5 + y * 41 + 100) % 256) as u8,
            ((x * 13 + y * 17 + 200) % 256) as u8,
        ])
    });
    let sample = ImageSample::new("fixed", image.clone(), None).unwrap();

    // Hand-run: normalize (v/255 - 0.5) / 0.5, conv/relu/pool/conv/relu/gap,
    // affine head.
    let (h, w) = (10usize, 12usize);
    let input: Vec<Plane> = (0..3)
        .map(|c| {
            (0..h)
                .map(|y| {
                    (0..w)
                        .map(|x| {
                            let v = image.get_pixel(x as u32, y as u32)[c] as f64 / 255.0;
                            (v - 0.5) / 0.5
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut stage1 = conv3x3_same(&input, c1w, c1b);
    relu(&mut stage1);
    let pooled = maxpool2(&stage1);
    let mut stage2 = conv3x3_same(&pooled, c2w, c2b);
    relu(&mut stage2);
    let features = global_mean(&stage2);
    assert_eq!(features.len(), 16);

    let expected: Vec<f64> = (0..3)
        .map(|o| {
            head_b.data[o]
                + features
                    .iter()
                    .enumerate()
                    .map(|(i, f)| head_w.data[o * 16 + i] * f)
                    .sum::<f64>()
        })
        .collect();

    let scores = classifier.forward(std::slice::from_ref(&sample)).unwrap();
    for (got, want) in scores.row(0).iter().zip(&expected) {
        assert!(
            (got - want).abs() < 1e-9,
            "library {got} vs hand-run {want}"
        );
    }
}

/// An ensemble of one is pointwise identical to single-model softmax
/// inference.
#[test]
fn ensemble_of_one_equals_single_model_inference() {
    let classifier = build_classifier(&BackboneSpec::tiny(), 3, 4).unwrap();
    let padding = PaddingSpec {
        target_height: 9,
        target_width: 9,
        fill: [255, 255, 255],
        placement: Placement::Center,
    };
    let checkpoint = Checkpoint {
        member_index: 0,
        spec: classifier.spec().clone(),
        parameters: classifier.state_tensors(),
        best_loss: 0.1,
        best_epoch: 1,
        label_map: vec![-1, 0, 1],
        padding,
        fingerprint: "single".into(),
        num_classes: 3,
    };
    let corpus: Vec<ImageSample> = (0..5)
        .map(|i| {
            let img = RgbImage::from_fn(9, 9, |x, y| {
                Rgb([(x * 20 + i * 3) as u8, (y * 25) as u8, (x * y) as u8])
            });
            ImageSample::new(format!("e{i}"), img, None).unwrap()
        })
        .collect();

    let predictions = predict(std::slice::from_ref(&checkpoint), &corpus).unwrap();
    for (p, sample) in predictions.iter().zip(&corpus) {
        let scores = classifier.forward(std::slice::from_ref(sample)).unwrap();
        let probs = softmax(scores.row(0).as_slice().unwrap()).unwrap();
        for (got, want) in p.mean_probs.iter().zip(&probs) {
            assert_eq!(got, want, "sample {}", sample.id);
        }
    }
}
