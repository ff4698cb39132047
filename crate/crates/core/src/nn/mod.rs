//! Minimal dense/convolutional layer library with explicit backward passes.
//!
//! Everything is computed in `f64` on `ndarray` arrays: images and activations
//! are NCHW [`Array4`]s, feature/score matrices are [`Array2`]s. Training
//! forwards return a cache consumed by the matching backward; inference
//! forwards take `&self` and are pure. Parameter traversal order is fixed by
//! construction, which pins optimizer state and checkpoint layout.

mod conv;
mod layers;
mod net;

pub use conv::{Conv2d, ConvCache};
pub use layers::{ActCache, Activation, BatchNorm2d, BnCache, Linear, LinearCache, MaxPool2d, PoolCache};
pub use net::{NamedTensor, Net, Node, NodeCache, SqueezeExcite};

use ndarray::{Array2, Array4, ArrayD};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// One trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl Param {
    pub fn new(value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self {
            name: String::new(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Kaiming-normal draw with fan-out scaling, the usual conv initializer.
pub(crate) fn kaiming_normal(rng: &mut impl Rng, shape: &[usize], fan_out: usize) -> ArrayD<f64> {
    let std = (2.0 / fan_out as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("std is finite");
    ArrayD::from_shape_simple_fn(shape.to_vec(), || normal.sample(rng))
}

/// Uniform(-bound, bound) draw used for linear layers.
pub(crate) fn uniform_init(rng: &mut impl Rng, shape: &[usize], bound: f64) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(shape.to_vec(), || rng.gen_range(-bound..=bound))
}

/// Flatten a (N, C, 1, 1) activation into (N, C).
pub(crate) fn squash_spatial(x: Array4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    debug_assert_eq!((h, w), (1, 1));
    x.into_shape_with_order((n, c))
        .expect("contiguous NCHW with 1x1 spatial")
}

/// Expand a (N, C) gradient back to (N, C, 1, 1).
pub(crate) fn unsquash_spatial(x: Array2<f64>) -> Array4<f64> {
    let (n, c) = x.dim();
    x.into_shape_with_order((n, c, 1, 1))
        .expect("contiguous (N, C)")
}
