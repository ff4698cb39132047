use ndarray::{s, Array2, Array3, Array4, ArrayView3, Axis};
use rand::Rng;
use rayon::prelude::*;

use super::{kaiming_normal, Param};
use crate::{Error, Result};

/// 2D convolution with square kernels, symmetric zero padding, and channel
/// groups (groups = in_channels gives a depthwise convolution).
#[derive(Debug, Clone)]
pub struct Conv2d {
    /// Shape (out_channels, in_channels / groups, k, k).
    pub weight: Param,
    /// Shape (out_channels,), when present.
    pub bias: Option<Param>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

#[derive(Debug)]
pub struct ConvCache {
    /// Per-sample, per-group im2col matrices kept for the weight gradient.
    cols: Vec<Vec<Array2<f64>>>,
    in_shape: (usize, usize, usize, usize),
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        with_bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(
            groups >= 1 && in_channels.is_multiple_of(groups) && out_channels.is_multiple_of(groups)
        );
        let shape = [out_channels, in_channels / groups, kernel, kernel];
        let fan_out = kernel * kernel * out_channels / groups;
        let weight = Param::new(kaiming_normal(rng, &shape, fan_out));
        let bias = with_bias.then(|| Param::new(ndarray::ArrayD::zeros(vec![out_channels])));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups,
        }
    }

    pub fn output_spatial(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = (h + 2 * self.padding).checked_sub(self.kernel).map(|v| v / self.stride + 1);
        let ow = (w + 2 * self.padding).checked_sub(self.kernel).map(|v| v / self.stride + 1);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok((oh, ow)),
            _ => Err(Error::Invalid(format!(
                "input {h}x{w} too small for conv kernel {} stride {} padding {}",
                self.kernel, self.stride, self.padding
            ))),
        }
    }

    fn weight_matrix(&self, group: usize) -> ndarray::ArrayView2<'_, f64> {
        let ocg = self.out_channels / self.groups;
        let icg = self.in_channels / self.groups;
        let kk = self.kernel * self.kernel;
        self.weight
            .value
            .view()
            .into_shape_with_order((self.out_channels, icg * kk))
            .expect("weight is contiguous")
            .slice_move(s![group * ocg..(group + 1) * ocg, ..])
    }

    fn forward_sample(
        &self,
        x: &ArrayView3<f64>,
        oh: usize,
        ow: usize,
        keep_cols: bool,
    ) -> (Array3<f64>, Vec<Array2<f64>>) {
        let icg = self.in_channels / self.groups;
        let ocg = self.out_channels / self.groups;
        let mut y = Array3::<f64>::zeros((self.out_channels, oh, ow));
        let mut cols_out = Vec::new();
        for g in 0..self.groups {
            let xg = x.slice(s![g * icg..(g + 1) * icg, .., ..]);
            let cols = im2col(&xg, self.kernel, self.stride, self.padding, oh, ow);
            let w = self.weight_matrix(g);
            let out = w.dot(&cols); // (ocg, oh*ow)
            let out3 = out
                .into_shape_with_order((ocg, oh, ow))
                .expect("gemm output is contiguous");
            y.slice_mut(s![g * ocg..(g + 1) * ocg, .., ..]).assign(&out3);
            if keep_cols {
                cols_out.push(cols);
            }
        }
        if let Some(bias) = &self.bias {
            for c in 0..self.out_channels {
                let b = bias.value[[c]];
                y.slice_mut(s![c, .., ..]).mapv_inplace(|v| v + b);
            }
        }
        (y, cols_out)
    }

    fn forward_impl(&self, x: &Array4<f64>, keep_cols: bool) -> Result<(Array4<f64>, ConvCache)> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channel mismatch");
        let (oh, ow) = self.output_spatial(h, w)?;
        let results: Vec<(Array3<f64>, Vec<Array2<f64>>)> = (0..n)
            .into_par_iter()
            .map(|i| self.forward_sample(&x.index_axis(Axis(0), i), oh, ow, keep_cols))
            .collect();
        let mut y = Array4::<f64>::zeros((n, self.out_channels, oh, ow));
        let mut cols = Vec::with_capacity(if keep_cols { n } else { 0 });
        for (i, (yi, ci)) in results.into_iter().enumerate() {
            y.index_axis_mut(Axis(0), i).assign(&yi);
            if keep_cols {
                cols.push(ci);
            }
        }
        Ok((
            y,
            ConvCache {
                cols,
                in_shape: (n, c, h, w),
            },
        ))
    }

    pub fn forward_eval(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        self.forward_impl(x, false).map(|(y, _)| y)
    }

    pub fn forward_train(&self, x: &Array4<f64>) -> Result<(Array4<f64>, ConvCache)> {
        self.forward_impl(x, true)
    }

    /// Accumulate weight/bias gradients and return the input gradient.
    pub fn backward(&mut self, cache: &ConvCache, dy: &Array4<f64>) -> Array4<f64> {
        let (n, _c, h, w) = cache.in_shape;
        let (dn, dc, oh, ow) = dy.dim();
        assert_eq!(dn, n);
        assert_eq!(dc, self.out_channels);
        let icg = self.in_channels / self.groups;
        let ocg = self.out_channels / self.groups;
        let kk = self.kernel * self.kernel;

        // Per-sample contributions computed in parallel, reduced in sample
        // order so results do not depend on scheduling.
        let parts: Vec<(Array3<f64>, Array2<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let dyi = dy.index_axis(Axis(0), i);
                let mut dx_i = Array3::<f64>::zeros((self.in_channels, h, w));
                let mut dw_i = Array2::<f64>::zeros((self.out_channels, icg * kk));
                let mut db_i = vec![0.0; self.out_channels];
                for g in 0..self.groups {
                    let dy_mat = dyi
                        .slice(s![g * ocg..(g + 1) * ocg, .., ..])
                        .to_owned()
                        .into_shape_with_order((ocg, oh * ow))
                        .expect("contiguous");
                    let cols = &cache.cols[i][g];
                    dw_i.slice_mut(s![g * ocg..(g + 1) * ocg, ..])
                        .assign(&dy_mat.dot(&cols.t()));
                    let w_mat = self.weight_matrix(g);
                    let dcols = w_mat.t().dot(&dy_mat); // (icg*kk, oh*ow)
                    let dxg = col2im(
                        &dcols,
                        icg,
                        h,
                        w,
                        self.kernel,
                        self.stride,
                        self.padding,
                        oh,
                        ow,
                    );
                    dx_i.slice_mut(s![g * icg..(g + 1) * icg, .., ..])
                        .assign(&dxg);
                }
                if self.bias.is_some() {
                    for (c, db) in db_i.iter_mut().enumerate() {
                        *db = dyi.slice(s![c, .., ..]).sum();
                    }
                }
                (dx_i, dw_i, db_i)
            })
            .collect();

        let mut dx = Array4::<f64>::zeros((n, self.in_channels, h, w));
        let mut gw = self
            .weight
            .grad
            .view_mut()
            .into_shape_with_order((self.out_channels, icg * kk))
            .expect("weight grad is contiguous");
        for (i, (dx_i, dw_i, db_i)) in parts.into_iter().enumerate() {
            dx.index_axis_mut(Axis(0), i).assign(&dx_i);
            gw += &dw_i;
            if let Some(bias) = &mut self.bias {
                for (c, db) in db_i.iter().enumerate() {
                    bias.grad[[c]] += db;
                }
            }
        }
        dx
    }
}

/// Unfold a (C, H, W) view into a (C*k*k, oh*ow) patch matrix.
fn im2col(
    x: &ArrayView3<f64>,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let mut cols = Array2::<f64>::zeros((c * k * k, oh * ow));
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let mut out_row = cols.row_mut(row);
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        out_row[oy * ow + ox] = x[[ch, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Fold a (C*k*k, oh*ow) patch-gradient matrix back onto a (C, H, W) grid,
/// accumulating where patches overlap. Inverse accumulation of [`im2col`].
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &Array2<f64>,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> Array3<f64> {
    let mut x = Array3::<f64>::zeros((c, h, w));
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let col_row = cols.row(row);
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        x[[ch, iy as usize, ix as usize]] += col_row[oy * ow + ox];
                    }
                }
            }
        }
    }
    x
}
