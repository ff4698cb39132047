//! Trainable classifiers: a backbone feature extractor plus an affine head.
//!
//! Backbones come from a [`BackboneProvider`]. The built-in [`NativeProvider`]
//! realizes every registered architecture in-process; `pretrained = true`
//! additionally loads weights from the weights cache directory (see
//! [`WEIGHTS_DIR_ENV`]) and fails with a distinct error when none are cached.
//! The `tiny_test_net` architecture is a small real convnet that needs no
//! external weights, so the entire pipeline can run and be tested offline.

mod archs;

use std::path::PathBuf;

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::corpus::ImageSample;
use crate::nn::{Linear, LinearCache, NamedTensor, Net, NodeCache};
use crate::{derive_seed, Error, Result};

/// Environment variable naming the directory where pretrained backbone
/// weights are cached as `<architecture>.hpw` tensor containers.
pub const WEIGHTS_DIR_ENV: &str = "HISTOPAD_WEIGHTS_DIR";

/// Architectures the native provider can realize.
pub const REGISTERED_ARCHITECTURES: [&str; 6] = [
    "resnet34",
    "resnet50",
    "vgg16",
    "efficientnet_b0",
    "mobilenet_v2",
    "tiny_test_net",
];

/// Per-channel input normalization applied before the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalization {
    /// Statistics the pretrained zoo models were trained with.
    pub const IMAGENET: Normalization = Normalization {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };
    /// Neutral statistics for the offline test backbone.
    pub const CENTERED: Normalization = Normalization {
        mean: [0.5, 0.5, 0.5],
        std: [0.5, 0.5, 0.5],
    };

    pub fn validate(&self) -> Result<()> {
        if self.mean.iter().chain(self.std.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("normalization must be finite".into()));
        }
        if self.std.iter().any(|s| *s <= 0.0) {
            return Err(Error::InvalidSpec(
                "normalization std must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Which backbone to realize and how to feed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub architecture: String,
    pub pretrained: bool,
    pub normalization: Normalization,
}

impl BackboneSpec {
    /// Spec for a registered architecture with its published normalization.
    pub fn named(architecture: &str) -> Result<Self> {
        if !REGISTERED_ARCHITECTURES.contains(&architecture) {
            return Err(Error::UnknownArchitecture {
                name: architecture.to_string(),
            });
        }
        let normalization = if architecture == "tiny_test_net" {
            Normalization::CENTERED
        } else {
            Normalization::IMAGENET
        };
        Ok(Self {
            architecture: architecture.to_string(),
            pretrained: architecture != "tiny_test_net",
            normalization,
        })
    }

    pub fn tiny() -> Self {
        Self::named("tiny_test_net").expect("registered")
    }

    pub fn with_pretrained(mut self, pretrained: bool) -> Self {
        self.pretrained = pretrained;
        self
    }
}

/// The ordered set of backbones making up one ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: Vec<BackboneSpec>,
}

impl EnsembleSpec {
    pub fn new(members: Vec<BackboneSpec>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidSpec("ensemble needs at least 1 member".into()));
        }
        Ok(Self { members })
    }

    /// The default five-backbone ensemble.
    pub fn default_five() -> Self {
        let members = ["resnet34", "resnet50", "vgg16", "efficientnet_b0", "mobilenet_v2"]
            .iter()
            .map(|name| BackboneSpec::named(name).expect("registered"))
            .collect();
        Self { members }
    }

    /// An all-offline ensemble of `n` test backbones.
    pub fn tiny(n: usize) -> Self {
        Self {
            members: (0..n.max(1)).map(|_| BackboneSpec::tiny()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Source of realized feature extractors. Implementations must be
/// deterministic given (spec, seed).
pub trait BackboneProvider {
    fn realize(&self, spec: &BackboneSpec, seed: u64) -> Result<Net>;
}

/// In-process provider for every registered architecture.
#[derive(Debug, Clone, Default)]
pub struct NativeProvider {
    /// Overrides [`WEIGHTS_DIR_ENV`] when set.
    pub weights_dir: Option<PathBuf>,
}

impl NativeProvider {
    fn weights_path(&self, architecture: &str) -> Option<PathBuf> {
        let dir = self
            .weights_dir
            .clone()
            .or_else(|| std::env::var_os(WEIGHTS_DIR_ENV).map(PathBuf::from))?;
        Some(dir.join(format!("{architecture}.hpw")))
    }
}

impl BackboneProvider for NativeProvider {
    fn realize(&self, spec: &BackboneSpec, seed: u64) -> Result<Net> {
        let mut net = archs::build(&spec.architecture, seed)?;
        if spec.pretrained {
            let path = self.weights_path(&spec.architecture).ok_or_else(|| {
                Error::WeightsUnavailable {
                    name: spec.architecture.clone(),
                    msg: format!("no weights cache configured (set {WEIGHTS_DIR_ENV})"),
                }
            })?;
            if !path.is_file() {
                return Err(Error::WeightsUnavailable {
                    name: spec.architecture.clone(),
                    msg: format!("no cached weights at {}", path.display()),
                });
            }
            let tensors =
                crate::tensor_io::read_tensor_file(&path).map_err(|e| Error::WeightsUnavailable {
                    name: spec.architecture.clone(),
                    msg: e.to_string(),
                })?;
            net.load_state(&tensors).map_err(|e| Error::WeightsUnavailable {
                name: spec.architecture.clone(),
                msg: e.to_string(),
            })?;
        }
        Ok(net)
    }
}

/// Backward cache for one classifier training step.
pub struct ClassifierCache {
    net: Vec<NodeCache>,
    head: LinearCache,
}

/// A backbone plus a fresh affine head emitting one score per class.
/// Every parameter, backbone and head alike, is trainable.
#[derive(Debug, Clone)]
pub struct Classifier {
    net: Net,
    head: Linear,
    spec: BackboneSpec,
    num_classes: usize,
}

impl Classifier {
    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_width(&self) -> usize {
        self.net.feature_width()
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count() + self.head.weight.len() + self.head.bias.len()
    }

    /// Convert a uniformly sized batch into a normalized NCHW tensor.
    pub fn prepare_batch(&self, batch: &[ImageSample]) -> Result<Array4<f64>> {
        let (h, w) = (batch[0].height(), batch[0].width());
        for sample in batch {
            if (sample.height(), sample.width()) != (h, w) {
                return Err(Error::MixedBatchSizes {
                    first_height: h,
                    first_width: w,
                    other_height: sample.height(),
                    other_width: sample.width(),
                });
            }
        }
        let norm = &self.spec.normalization;
        let mut x = Array4::<f64>::zeros((batch.len(), 3, h as usize, w as usize));
        for (i, sample) in batch.iter().enumerate() {
            for (px_x, px_y, pixel) in sample.pixels.enumerate_pixels() {
                for c in 0..3 {
                    let v = pixel[c] as f64 / 255.0;
                    x[[i, c, px_y as usize, px_x as usize]] = (v - norm.mean[c]) / norm.std[c];
                }
            }
        }
        Ok(x)
    }

    /// Score a batch of identically sized images: one row of `num_classes`
    /// scores per sample. Pure given fixed parameters.
    pub fn forward(&self, batch: &[ImageSample]) -> Result<Array2<f64>> {
        if batch.is_empty() {
            return Ok(Array2::zeros((0, self.num_classes)));
        }
        let x = self.prepare_batch(batch)?;
        self.forward_tensor(&x)
    }

    pub fn forward_tensor(&self, x: &Array4<f64>) -> Result<Array2<f64>> {
        let features = self.net.forward_eval(x)?;
        Ok(self.head.forward_eval(&features))
    }

    /// Training-mode forward (batch statistics in any normalization layers),
    /// returning the cache for [`Classifier::backward`].
    pub fn forward_train(&mut self, x: &Array4<f64>) -> Result<(Array2<f64>, ClassifierCache)> {
        let (features, net_cache) = self.net.forward_train(x)?;
        let (scores, head_cache) = self.head.forward_train(&features);
        Ok((
            scores,
            ClassifierCache {
                net: net_cache,
                head: head_cache,
            },
        ))
    }

    /// Accumulate gradients for a score-space gradient `dscores`.
    pub fn backward(&mut self, cache: &ClassifierCache, dscores: &Array2<f64>) {
        let dfeatures = self.head.backward(&cache.head, dscores);
        self.net.backward(&cache.net, &dfeatures);
    }

    pub fn for_each_param(&self, f: &mut dyn FnMut(&crate::nn::Param)) {
        self.net.for_each_param(f);
        f(&self.head.weight);
        f(&self.head.bias);
    }

    pub fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut crate::nn::Param)) {
        self.net.for_each_param_mut(f);
        f(&mut self.head.weight);
        f(&mut self.head.bias);
    }

    pub fn zero_grads(&mut self) {
        self.for_each_param_mut(&mut |p| p.zero_grad());
    }

    /// Full model state: backbone parameters and buffers, then head weights.
    pub fn state_tensors(&self) -> Vec<NamedTensor> {
        let mut out = self.net.state_tensors();
        out.push(NamedTensor {
            name: "head.weight".to_string(),
            shape: self.head.weight.value.shape().to_vec(),
            data: self.head.weight.value.iter().copied().collect(),
        });
        out.push(NamedTensor {
            name: "head.bias".to_string(),
            shape: self.head.bias.value.shape().to_vec(),
            data: self.head.bias.value.iter().copied().collect(),
        });
        out
    }

    pub fn load_state(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        if tensors.len() < 2 {
            return Err(Error::Invalid("classifier state needs head tensors".into()));
        }
        let (net_state, head_state) = tensors.split_at(tensors.len() - 2);
        self.net.load_state(net_state)?;
        for (param, tensor) in [
            (&mut self.head.weight, &head_state[0]),
            (&mut self.head.bias, &head_state[1]),
        ] {
            if tensor.shape != param.value.shape() {
                return Err(Error::Invalid(format!(
                    "head tensor {} shape {:?} does not match {:?}",
                    tensor.name,
                    tensor.shape,
                    param.value.shape()
                )));
            }
            param.value = ndarray::ArrayD::from_shape_vec(tensor.shape.clone(), tensor.data.clone())
                .expect("shape matches data");
            param.zero_grad();
        }
        Ok(())
    }
}

/// Build a classifier from a backbone spec using the default native provider.
///
/// The head is freshly initialized from `seed`; the backbone draw also derives
/// from `seed`, so construction is fully deterministic.
pub fn build_classifier(spec: &BackboneSpec, num_classes: usize, seed: u64) -> Result<Classifier> {
    build_classifier_with(&NativeProvider::default(), spec, num_classes, seed)
}

pub fn build_classifier_with(
    provider: &dyn BackboneProvider,
    spec: &BackboneSpec,
    num_classes: usize,
    seed: u64,
) -> Result<Classifier> {
    if num_classes < 2 {
        return Err(Error::InvalidSpec(format!(
            "num_classes must be at least 2, got {num_classes}"
        )));
    }
    spec.normalization.validate()?;
    if !REGISTERED_ARCHITECTURES.contains(&spec.architecture.as_str()) {
        return Err(Error::UnknownArchitecture {
            name: spec.architecture.clone(),
        });
    }
    let net = provider.realize(spec, derive_seed(seed, "backbone", 0))?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(derive_seed(
        seed, "head", 0,
    ));
    let head = Linear::new(net.feature_width(), num_classes, &mut rng);
    Ok(Classifier {
        net,
        head,
        spec: spec.clone(),
        num_classes,
    })
}

/// Numerically stable softmax: max-shifted exponentials, normalized to sum 1.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("softmax input {scores:?}"),
        });
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Row-wise softmax of a score matrix.
pub fn softmax_rows(scores: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let probs = softmax(row.as_slice().expect("row-major matrix"))?;
        for (dst, p) in row.iter_mut().zip(probs) {
            *dst = p;
        }
    }
    Ok(out)
}
