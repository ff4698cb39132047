use ndarray::{s, Array1, Array2, Array4};
use rand::Rng;

use super::{uniform_init, Param};
use crate::{Error, Result};

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Relu6,
    Silu,
    Sigmoid,
}

#[derive(Debug)]
pub struct ActCache {
    input: Array4<f64>,
}

impl Activation {
    fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Relu6 => x.clamp(0.0, 6.0),
            Activation::Silu => x * sigmoid(x),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Relu6 => {
                if x > 0.0 && x < 6.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }

    pub fn forward_eval(self, x: &Array4<f64>) -> Array4<f64> {
        x.mapv(|v| self.eval(v))
    }

    pub fn forward_train(self, x: &Array4<f64>) -> (Array4<f64>, ActCache) {
        (self.forward_eval(x), ActCache { input: x.clone() })
    }

    pub fn backward(self, cache: &ActCache, dy: &Array4<f64>) -> Array4<f64> {
        let mut dx = cache.input.mapv(|v| self.derivative(v));
        dx *= dy;
        dx
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Batch normalization over the channel axis of NCHW activations.
///
/// Training mode normalizes with batch statistics and maintains running
/// estimates (biased variance for normalization, unbiased for the running
/// estimate); eval mode applies the running estimates.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub eps: f64,
    pub momentum: f64,
}

#[derive(Debug)]
pub struct BnCache {
    xhat: Array4<f64>,
    inv_std: Array1<f64>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(ndarray::ArrayD::ones(vec![channels])),
            beta: Param::new(ndarray::ArrayD::zeros(vec![channels])),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward_eval(&self, x: &Array4<f64>) -> Array4<f64> {
        let (_n, c, _h, _w) = x.dim();
        assert_eq!(c, self.channels(), "batchnorm channel mismatch");
        let mut y = x.clone();
        for ch in 0..c {
            let inv = 1.0 / (self.running_var[ch] + self.eps).sqrt();
            let mean = self.running_mean[ch];
            let gamma = self.gamma.value[[ch]];
            let beta = self.beta.value[[ch]];
            y.slice_mut(s![.., ch, .., ..])
                .mapv_inplace(|v| (v - mean) * inv * gamma + beta);
        }
        y
    }

    pub fn forward_train(&mut self, x: &Array4<f64>) -> (Array4<f64>, BnCache) {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels(), "batchnorm channel mismatch");
        let m = (n * h * w) as f64;
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(c);
        for ch in 0..c {
            let slice = x.slice(s![.., ch, .., ..]);
            let mean = slice.sum() / m;
            let var = slice.fold(0.0, |acc, v| acc + (v - mean) * (v - mean)) / m;
            let inv = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = inv;
            xhat.slice_mut(s![.., ch, .., ..])
                .mapv_inplace(|v| (v - mean) * inv);

            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            self.running_mean[ch] = (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean;
            self.running_var[ch] = (1.0 - self.momentum) * self.running_var[ch] + self.momentum * unbiased;
        }
        let mut y = xhat.clone();
        for ch in 0..c {
            let gamma = self.gamma.value[[ch]];
            let beta = self.beta.value[[ch]];
            y.slice_mut(s![.., ch, .., ..])
                .mapv_inplace(|v| v * gamma + beta);
        }
        (y, BnCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &BnCache, dy: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = dy.dim();
        let m = (n * h * w) as f64;
        let mut dx = Array4::<f64>::zeros((n, c, h, w));
        for ch in 0..c {
            let dy_c = dy.slice(s![.., ch, .., ..]);
            let xhat_c = cache.xhat.slice(s![.., ch, .., ..]);
            let sum_dy = dy_c.sum();
            let sum_dy_xhat = (&dy_c * &xhat_c).sum();
            self.beta.grad[[ch]] += sum_dy;
            self.gamma.grad[[ch]] += sum_dy_xhat;

            let gamma = self.gamma.value[[ch]];
            let scale = gamma * cache.inv_std[ch] / m;
            let mut dx_c = dx.slice_mut(s![.., ch, .., ..]);
            ndarray::Zip::from(&mut dx_c)
                .and(&dy_c)
                .and(&xhat_c)
                .for_each(|d, &g, &xh| {
                    *d = scale * (m * g - sum_dy - xh * sum_dy_xhat);
                });
        }
        dx
    }
}

/// Max pooling with zero-padding treated as negative infinity.
#[derive(Debug, Clone, Copy)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug)]
pub struct PoolCache {
    /// Flat (iy * W + ix) source index per output element.
    argmax: Array4<usize>,
    in_shape: (usize, usize, usize, usize),
}

impl MaxPool2d {
    pub fn output_spatial(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = (h + 2 * self.padding).checked_sub(self.kernel).map(|v| v / self.stride + 1);
        let ow = (w + 2 * self.padding).checked_sub(self.kernel).map(|v| v / self.stride + 1);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok((oh, ow)),
            _ => Err(Error::Invalid(format!(
                "input {h}x{w} too small for maxpool kernel {} stride {} padding {}",
                self.kernel, self.stride, self.padding
            ))),
        }
    }

    fn forward_impl(&self, x: &Array4<f64>) -> Result<(Array4<f64>, PoolCache)> {
        let (n, c, h, w) = x.dim();
        let (oh, ow) = self.output_spatial(h, w)?;
        let mut y = Array4::<f64>::zeros((n, c, oh, ow));
        let mut argmax = Array4::<usize>::zeros((n, c, oh, ow));
        for i in 0..n {
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = usize::MAX;
                        for ky in 0..self.kernel {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..self.kernel {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let v = x[[i, ch, iy as usize, ix as usize]];
                                if v > best {
                                    best = v;
                                    best_idx = iy as usize * w + ix as usize;
                                }
                            }
                        }
                        assert!(best_idx != usize::MAX, "pooling window fully out of bounds");
                        y[[i, ch, oy, ox]] = best;
                        argmax[[i, ch, oy, ox]] = best_idx;
                    }
                }
            }
        }
        Ok((
            y,
            PoolCache {
                argmax,
                in_shape: (n, c, h, w),
            },
        ))
    }

    pub fn forward_eval(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        self.forward_impl(x).map(|(y, _)| y)
    }

    pub fn forward_train(&self, x: &Array4<f64>) -> Result<(Array4<f64>, PoolCache)> {
        self.forward_impl(x)
    }

    pub fn backward(&self, cache: &PoolCache, dy: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = cache.in_shape;
        let (_, _, oh, ow) = dy.dim();
        let mut dx = Array4::<f64>::zeros((n, c, h, w));
        for i in 0..n {
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let idx = cache.argmax[[i, ch, oy, ox]];
                        dx[[i, ch, idx / w, idx % w]] += dy[[i, ch, oy, ox]];
                    }
                }
            }
        }
        dx
    }
}

/// Affine map on feature matrices: y = x W^T + b.
#[derive(Debug, Clone)]
pub struct Linear {
    /// Shape (out_features, in_features).
    pub weight: Param,
    /// Shape (out_features,).
    pub bias: Param,
    pub in_features: usize,
    pub out_features: usize,
}

#[derive(Debug)]
pub struct LinearCache {
    input: Array2<f64>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        Self {
            weight: Param::new(uniform_init(rng, &[out_features, in_features], bound)),
            bias: Param::new(uniform_init(rng, &[out_features], bound)),
            in_features,
            out_features,
        }
    }

    fn weight_matrix(&self) -> ndarray::ArrayView2<'_, f64> {
        self.weight
            .value
            .view()
            .into_dimensionality()
            .expect("weight is 2-d")
    }

    pub fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.in_features, "linear input width mismatch");
        let mut y = x.dot(&self.weight_matrix().t());
        for r in 0..y.nrows() {
            for c in 0..self.out_features {
                y[[r, c]] += self.bias.value[[c]];
            }
        }
        y
    }

    pub fn forward_train(&self, x: &Array2<f64>) -> (Array2<f64>, LinearCache) {
        (self.forward_eval(x), LinearCache { input: x.clone() })
    }

    pub fn backward(&mut self, cache: &LinearCache, dy: &Array2<f64>) -> Array2<f64> {
        let dw = dy.t().dot(&cache.input); // (out, in)
        let mut gw = self
            .weight
            .grad
            .view_mut()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("weight grad is 2-d");
        gw += &dw;
        for c in 0..self.out_features {
            self.bias.grad[[c]] += dy.column(c).sum();
        }
        dy.dot(&self.weight_matrix())
    }
}
