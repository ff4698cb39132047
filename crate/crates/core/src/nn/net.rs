use ndarray::{Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use super::conv::{Conv2d, ConvCache};
use super::layers::{ActCache, Activation, BatchNorm2d, BnCache, MaxPool2d, PoolCache};
use super::{squash_spatial, unsquash_spatial, Param};
use crate::{Error, Result};

/// One step of a feature-extractor graph.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Node {
    Conv(Conv2d),
    BatchNorm(BatchNorm2d),
    Act(Activation),
    MaxPool(MaxPool2d),
    GlobalAvgPool,
    /// y = body(x) + shortcut(x); an empty shortcut is the identity.
    Residual {
        body: Vec<Node>,
        shortcut: Vec<Node>,
    },
    SqueezeExcite(SqueezeExcite),
}

/// Channel gating block: global pool, bottleneck 1x1 convs, sigmoid scale.
#[derive(Debug, Clone)]
pub struct SqueezeExcite {
    pub squeeze: Conv2d,
    pub excite: Conv2d,
}

#[derive(Debug)]
pub enum NodeCache {
    Conv(ConvCache),
    BatchNorm(BnCache),
    Act(ActCache),
    MaxPool(PoolCache),
    GlobalAvgPool { h: usize, w: usize },
    Residual {
        body: Vec<NodeCache>,
        shortcut: Vec<NodeCache>,
    },
    SqueezeExcite(Box<SeCache>),
}

#[derive(Debug)]
pub struct SeCache {
    input: Array4<f64>,
    gate: Array4<f64>,
    squeeze_cache: ConvCache,
    silu_cache: ActCache,
    excite_cache: ConvCache,
    sigmoid_cache: ActCache,
    in_hw: (usize, usize),
}

fn global_avg_pool(x: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let mut y = Array4::<f64>::zeros((n, c, 1, 1));
    let scale = 1.0 / (h * w) as f64;
    for i in 0..n {
        for ch in 0..c {
            y[[i, ch, 0, 0]] = x.index_axis(Axis(0), i).index_axis(Axis(0), ch).sum() * scale;
        }
    }
    y
}

fn global_avg_pool_backward(dy: &Array4<f64>, h: usize, w: usize) -> Array4<f64> {
    let (n, c, _, _) = dy.dim();
    let scale = 1.0 / (h * w) as f64;
    let mut dx = Array4::<f64>::zeros((n, c, h, w));
    for i in 0..n {
        for ch in 0..c {
            let g = dy[[i, ch, 0, 0]] * scale;
            dx.index_axis_mut(Axis(0), i)
                .index_axis_mut(Axis(0), ch)
                .fill(g);
        }
    }
    dx
}

/// Multiply each (H, W) plane of `x` by its (n, c) gate entry.
fn scale_channels(x: &Array4<f64>, gate: &Array4<f64>) -> Array4<f64> {
    let (n, c, _h, _w) = x.dim();
    let mut y = x.clone();
    for i in 0..n {
        for ch in 0..c {
            let g = gate[[i, ch, 0, 0]];
            y.index_axis_mut(Axis(0), i)
                .index_axis_mut(Axis(0), ch)
                .mapv_inplace(|v| v * g);
        }
    }
    y
}

impl SqueezeExcite {
    fn forward_eval(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let s = global_avg_pool(x);
        let u = Activation::Silu.forward_eval(&self.squeeze.forward_eval(&s)?);
        let gate = Activation::Sigmoid.forward_eval(&self.excite.forward_eval(&u)?);
        Ok(scale_channels(x, &gate))
    }

    fn forward_train(&self, x: &Array4<f64>) -> Result<(Array4<f64>, Box<SeCache>)> {
        let (_, _, h, w) = x.dim();
        let s = global_avg_pool(x);
        let (u_pre, squeeze_cache) = self.squeeze.forward_train(&s)?;
        let (u, silu_cache) = Activation::Silu.forward_train(&u_pre);
        let (g_pre, excite_cache) = self.excite.forward_train(&u)?;
        let (gate, sigmoid_cache) = Activation::Sigmoid.forward_train(&g_pre);
        let y = scale_channels(x, &gate);
        Ok((
            y,
            Box::new(SeCache {
                input: x.clone(),
                gate,
                squeeze_cache,
                silu_cache,
                excite_cache,
                sigmoid_cache,
                in_hw: (h, w),
            }),
        ))
    }

    fn backward(&mut self, cache: &SeCache, dy: &Array4<f64>) -> Array4<f64> {
        let (h, w) = cache.in_hw;
        let (n, c, _, _) = cache.gate.dim();
        // Gate gradient: sum of dy * x over the spatial plane.
        let mut dgate = Array4::<f64>::zeros((n, c, 1, 1));
        for i in 0..n {
            for ch in 0..c {
                let prod = (&dy.index_axis(Axis(0), i).index_axis(Axis(0), ch)
                    .to_owned()
                    * &cache.input.index_axis(Axis(0), i).index_axis(Axis(0), ch))
                    .sum();
                dgate[[i, ch, 0, 0]] = prod;
            }
        }
        let mut dx = scale_channels(dy, &cache.gate);

        let dg_pre = Activation::Sigmoid.backward(&cache.sigmoid_cache, &dgate);
        let du = self.excite.backward(&cache.excite_cache, &dg_pre);
        let du_pre = Activation::Silu.backward(&cache.silu_cache, &du);
        let ds = self.squeeze.backward(&cache.squeeze_cache, &du_pre);
        dx += &global_avg_pool_backward(&ds, h, w);
        dx
    }
}

fn seq_forward_eval(nodes: &[Node], x: Array4<f64>) -> Result<Array4<f64>> {
    let mut cur = x;
    for node in nodes {
        cur = match node {
            Node::Conv(conv) => conv.forward_eval(&cur)?,
            Node::BatchNorm(bn) => bn.forward_eval(&cur),
            Node::Act(act) => act.forward_eval(&cur),
            Node::MaxPool(pool) => pool.forward_eval(&cur)?,
            Node::GlobalAvgPool => global_avg_pool(&cur),
            Node::Residual { body, shortcut } => {
                let main = seq_forward_eval(body, cur.clone())?;
                let skip = if shortcut.is_empty() {
                    cur
                } else {
                    seq_forward_eval(shortcut, cur)?
                };
                main + skip
            }
            Node::SqueezeExcite(se) => se.forward_eval(&cur)?,
        };
    }
    Ok(cur)
}

fn seq_forward_train(nodes: &mut [Node], x: Array4<f64>) -> Result<(Array4<f64>, Vec<NodeCache>)> {
    let mut cur = x;
    let mut caches = Vec::with_capacity(nodes.len());
    for node in nodes.iter_mut() {
        let (next, cache) = match node {
            Node::Conv(conv) => {
                let (y, c) = conv.forward_train(&cur)?;
                (y, NodeCache::Conv(c))
            }
            Node::BatchNorm(bn) => {
                let (y, c) = bn.forward_train(&cur);
                (y, NodeCache::BatchNorm(c))
            }
            Node::Act(act) => {
                let (y, c) = act.forward_train(&cur);
                (y, NodeCache::Act(c))
            }
            Node::MaxPool(pool) => {
                let (y, c) = pool.forward_train(&cur)?;
                (y, NodeCache::MaxPool(c))
            }
            Node::GlobalAvgPool => {
                let (_, _, h, w) = cur.dim();
                (global_avg_pool(&cur), NodeCache::GlobalAvgPool { h, w })
            }
            Node::Residual { body, shortcut } => {
                let (main, body_caches) = seq_forward_train(body, cur.clone())?;
                let (skip, shortcut_caches) = if shortcut.is_empty() {
                    (cur, Vec::new())
                } else {
                    seq_forward_train(shortcut, cur)?
                };
                (
                    main + skip,
                    NodeCache::Residual {
                        body: body_caches,
                        shortcut: shortcut_caches,
                    },
                )
            }
            Node::SqueezeExcite(se) => {
                let (y, c) = se.forward_train(&cur)?;
                (y, NodeCache::SqueezeExcite(c))
            }
        };
        cur = next;
        caches.push(cache);
    }
    Ok((cur, caches))
}

fn seq_backward(nodes: &mut [Node], caches: &[NodeCache], dy: Array4<f64>) -> Array4<f64> {
    assert_eq!(nodes.len(), caches.len(), "cache/node length mismatch");
    let mut cur = dy;
    for (node, cache) in nodes.iter_mut().zip(caches.iter()).rev() {
        cur = match (node, cache) {
            (Node::Conv(conv), NodeCache::Conv(c)) => conv.backward(c, &cur),
            (Node::BatchNorm(bn), NodeCache::BatchNorm(c)) => bn.backward(c, &cur),
            (Node::Act(act), NodeCache::Act(c)) => act.backward(c, &cur),
            (Node::MaxPool(pool), NodeCache::MaxPool(c)) => pool.backward(c, &cur),
            (Node::GlobalAvgPool, NodeCache::GlobalAvgPool { h, w }) => {
                global_avg_pool_backward(&cur, *h, *w)
            }
            (
                Node::Residual { body, shortcut },
                NodeCache::Residual {
                    body: body_caches,
                    shortcut: shortcut_caches,
                },
            ) => {
                let d_main = seq_backward(body, body_caches, cur.clone());
                if shortcut.is_empty() {
                    d_main + cur
                } else {
                    d_main + seq_backward(shortcut, shortcut_caches, cur)
                }
            }
            (Node::SqueezeExcite(se), NodeCache::SqueezeExcite(c)) => se.backward(c, &cur),
            _ => unreachable!("node/cache kind mismatch"),
        };
    }
    cur
}

fn visit_nodes<'a>(nodes: &'a [Node], f: &mut dyn FnMut(&'a Param)) {
    for node in nodes {
        match node {
            Node::Conv(conv) => {
                f(&conv.weight);
                if let Some(b) = &conv.bias {
                    f(b);
                }
            }
            Node::BatchNorm(bn) => {
                f(&bn.gamma);
                f(&bn.beta);
            }
            Node::Residual { body, shortcut } => {
                visit_nodes(body, f);
                visit_nodes(shortcut, f);
            }
            Node::SqueezeExcite(se) => {
                f(&se.squeeze.weight);
                if let Some(b) = &se.squeeze.bias {
                    f(b);
                }
                f(&se.excite.weight);
                if let Some(b) = &se.excite.bias {
                    f(b);
                }
            }
            _ => {}
        }
    }
}

fn visit_nodes_mut(nodes: &mut [Node], f: &mut dyn FnMut(&mut Param)) {
    for node in nodes {
        match node {
            Node::Conv(conv) => {
                f(&mut conv.weight);
                if let Some(b) = &mut conv.bias {
                    f(b);
                }
            }
            Node::BatchNorm(bn) => {
                f(&mut bn.gamma);
                f(&mut bn.beta);
            }
            Node::Residual { body, shortcut } => {
                visit_nodes_mut(body, f);
                visit_nodes_mut(shortcut, f);
            }
            Node::SqueezeExcite(se) => {
                f(&mut se.squeeze.weight);
                if let Some(b) = &mut se.squeeze.bias {
                    f(b);
                }
                f(&mut se.excite.weight);
                if let Some(b) = &mut se.excite.bias {
                    f(b);
                }
            }
            _ => {}
        }
    }
}

fn visit_batchnorms_mut(nodes: &mut [Node], f: &mut dyn FnMut(&mut BatchNorm2d)) {
    for node in nodes {
        match node {
            Node::BatchNorm(bn) => f(bn),
            Node::Residual { body, shortcut } => {
                visit_batchnorms_mut(body, f);
                visit_batchnorms_mut(shortcut, f);
            }
            _ => {}
        }
    }
}

/// One named tensor of model state (parameter or batchnorm buffer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// A feature extractor: a node sequence ending in 1x1 spatial resolution,
/// flattened to a (batch, feature_width) matrix.
#[derive(Debug, Clone)]
pub struct Net {
    nodes: Vec<Node>,
    feature_width: usize,
}

impl Net {
    pub fn new(mut nodes: Vec<Node>, feature_width: usize) -> Self {
        let mut idx = 0usize;
        visit_nodes_mut(&mut nodes, &mut |p| {
            if p.name.is_empty() {
                p.name = format!("p{idx}");
            }
            idx += 1;
        });
        Self {
            nodes,
            feature_width,
        }
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn forward_eval(&self, x: &Array4<f64>) -> Result<Array2<f64>> {
        let y = seq_forward_eval(&self.nodes, x.clone())?;
        self.check_final(&y)?;
        Ok(squash_spatial(y))
    }

    pub fn forward_train(&mut self, x: &Array4<f64>) -> Result<(Array2<f64>, Vec<NodeCache>)> {
        let (y, caches) = seq_forward_train(&mut self.nodes, x.clone())?;
        self.check_final(&y)?;
        Ok((squash_spatial(y), caches))
    }

    pub fn backward(&mut self, caches: &[NodeCache], dfeatures: &Array2<f64>) {
        let dy = unsquash_spatial(dfeatures.clone());
        seq_backward(&mut self.nodes, caches, dy);
    }

    fn check_final(&self, y: &Array4<f64>) -> Result<()> {
        let (_n, c, h, w) = y.dim();
        if (h, w) != (1, 1) || c != self.feature_width {
            return Err(Error::Invalid(format!(
                "feature extractor produced {c}x{h}x{w}, expected {}x1x1",
                self.feature_width
            )));
        }
        Ok(())
    }

    pub fn for_each_param(&self, f: &mut dyn FnMut(&Param)) {
        visit_nodes(&self.nodes, f);
    }

    pub fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        visit_nodes_mut(&mut self.nodes, f);
    }

    pub fn zero_grads(&mut self) {
        self.for_each_param_mut(&mut |p| p.zero_grad());
    }

    pub fn param_count(&self) -> usize {
        let mut total = 0;
        self.for_each_param(&mut |p| total += p.len());
        total
    }

    /// All state in traversal order: parameters, then batchnorm buffers.
    pub fn state_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        self.for_each_param(&mut |p| {
            out.push(NamedTensor {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.iter().copied().collect(),
            });
        });
        let mut nodes = self.nodes.clone();
        let mut bn_idx = 0usize;
        visit_batchnorms_mut(&mut nodes, &mut |bn| {
            out.push(NamedTensor {
                name: format!("bn{bn_idx}.running_mean"),
                shape: vec![bn.running_mean.len()],
                data: bn.running_mean.to_vec(),
            });
            out.push(NamedTensor {
                name: format!("bn{bn_idx}.running_var"),
                shape: vec![bn.running_var.len()],
                data: bn.running_var.to_vec(),
            });
            bn_idx += 1;
        });
        out
    }

    /// Load state produced by [`Net::state_tensors`] on an identically built net.
    pub fn load_state(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let mut cursor = 0usize;
        let mut failure: Option<String> = None;
        self.for_each_param_mut(&mut |p| {
            if failure.is_some() {
                return;
            }
            let Some(t) = tensors.get(cursor) else {
                failure = Some("state has fewer tensors than the model".to_string());
                return;
            };
            if t.shape != p.value.shape() {
                failure = Some(format!(
                    "tensor {} shape {:?} does not match model shape {:?}",
                    t.name,
                    t.shape,
                    p.value.shape()
                ));
                return;
            }
            p.value = ndarray::ArrayD::from_shape_vec(t.shape.clone(), t.data.clone())
                .expect("shape matches data length");
            p.zero_grad();
            cursor += 1;
        });
        if let Some(msg) = failure {
            return Err(Error::Invalid(msg));
        }
        visit_batchnorms_mut(&mut self.nodes, &mut |bn| {
            if failure.is_some() {
                return;
            }
            for buffer in ["running_mean", "running_var"] {
                let Some(t) = tensors.get(cursor) else {
                    failure = Some("state has fewer tensors than the model".to_string());
                    return;
                };
                if t.shape != [bn.channels()] {
                    failure = Some(format!(
                        "buffer {} shape {:?} does not match {} channels",
                        t.name,
                        t.shape,
                        bn.channels()
                    ));
                    return;
                }
                let values = ndarray::Array1::from_vec(t.data.clone());
                if buffer == "running_mean" {
                    bn.running_mean = values;
                } else {
                    bn.running_var = values;
                }
                cursor += 1;
            }
        });
        if let Some(msg) = failure {
            return Err(Error::Invalid(msg));
        }
        if cursor != tensors.len() {
            return Err(Error::Invalid(format!(
                "state has {} tensors, model consumed {cursor}",
                tensors.len()
            )));
        }
        Ok(())
    }
}
