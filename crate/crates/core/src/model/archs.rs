//! Native constructors for the registered backbone architectures.
//!
//! Each builder returns the convolutional trunk of the architecture ending in
//! global average pooling; the original classification layers are not built,
//! since the head is replaced anyway. Initialization is Kaiming-normal for
//! convolutions, drawn from a seeded stream in construction order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{Activation, BatchNorm2d, Conv2d, MaxPool2d, Net, Node, SqueezeExcite};
use crate::{Error, Result};

pub fn build(architecture: &str, seed: u64) -> Result<Net> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match architecture {
        "tiny_test_net" => Ok(tiny_test_net(&mut rng)),
        "resnet34" => Ok(resnet(&mut rng, false)),
        "resnet50" => Ok(resnet(&mut rng, true)),
        "vgg16" => Ok(vgg16(&mut rng)),
        "mobilenet_v2" => Ok(mobilenet_v2(&mut rng)),
        "efficientnet_b0" => Ok(efficientnet_b0(&mut rng)),
        other => Err(Error::UnknownArchitecture {
            name: other.to_string(),
        }),
    }
}

fn conv(
    rng: &mut ChaCha8Rng,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    groups: usize,
    bias: bool,
) -> Node {
    Node::Conv(Conv2d::new(
        in_ch,
        out_ch,
        kernel,
        stride,
        kernel / 2,
        groups,
        bias,
        rng,
    ))
}

fn bn(ch: usize) -> Node {
    Node::BatchNorm(BatchNorm2d::new(ch))
}

/// Two small convolutions and pooling: a real, fully trainable network that
/// is cheap enough for tests and offline runs. No normalization layers, so
/// gradients are batch-independent.
fn tiny_test_net(rng: &mut ChaCha8Rng) -> Net {
    let nodes = vec![
        conv(rng, 3, 8, 3, 1, 1, true),
        Node::Act(Activation::Relu),
        Node::MaxPool(MaxPool2d {
            kernel: 2,
            stride: 2,
            padding: 0,
        }),
        conv(rng, 8, 16, 3, 1, 1, true),
        Node::Act(Activation::Relu),
        Node::GlobalAvgPool,
    ];
    Net::new(nodes, 16)
}

fn basic_block(rng: &mut ChaCha8Rng, in_ch: usize, out_ch: usize, stride: usize) -> Vec<Node> {
    let body = vec![
        conv(rng, in_ch, out_ch, 3, stride, 1, false),
        bn(out_ch),
        Node::Act(Activation::Relu),
        conv(rng, out_ch, out_ch, 3, 1, 1, false),
        bn(out_ch),
    ];
    let shortcut = if stride != 1 || in_ch != out_ch {
        vec![conv(rng, in_ch, out_ch, 1, stride, 1, false), bn(out_ch)]
    } else {
        vec![]
    };
    vec![
        Node::Residual { body, shortcut },
        Node::Act(Activation::Relu),
    ]
}

fn bottleneck_block(rng: &mut ChaCha8Rng, in_ch: usize, mid: usize, stride: usize) -> Vec<Node> {
    let out_ch = mid * 4;
    let body = vec![
        conv(rng, in_ch, mid, 1, 1, 1, false),
        bn(mid),
        Node::Act(Activation::Relu),
        conv(rng, mid, mid, 3, stride, 1, false),
        bn(mid),
        Node::Act(Activation::Relu),
        conv(rng, mid, out_ch, 1, 1, 1, false),
        bn(out_ch),
    ];
    let shortcut = if stride != 1 || in_ch != out_ch {
        vec![conv(rng, in_ch, out_ch, 1, stride, 1, false), bn(out_ch)]
    } else {
        vec![]
    };
    vec![
        Node::Residual { body, shortcut },
        Node::Act(Activation::Relu),
    ]
}

/// ResNet-34 (basic blocks) or ResNet-50 (bottlenecks), stages [3, 4, 6, 3].
fn resnet(rng: &mut ChaCha8Rng, bottleneck: bool) -> Net {
    let mut nodes = vec![
        conv(rng, 3, 64, 7, 2, 1, false),
        bn(64),
        Node::Act(Activation::Relu),
        Node::MaxPool(MaxPool2d {
            kernel: 3,
            stride: 2,
            padding: 1,
        }),
    ];
    let stage_blocks = [3usize, 4, 6, 3];
    let stage_channels = [64usize, 128, 256, 512];
    let mut in_ch = 64;
    for (stage, (&blocks, &ch)) in stage_blocks.iter().zip(&stage_channels).enumerate() {
        for b in 0..blocks {
            let stride = if stage > 0 && b == 0 { 2 } else { 1 };
            if bottleneck {
                nodes.extend(bottleneck_block(rng, in_ch, ch, stride));
                in_ch = ch * 4;
            } else {
                nodes.extend(basic_block(rng, in_ch, ch, stride));
                in_ch = ch;
            }
        }
    }
    nodes.push(Node::GlobalAvgPool);
    Net::new(nodes, in_ch)
}

/// The 13-convolution VGG-16 trunk with global average pooling.
fn vgg16(rng: &mut ChaCha8Rng) -> Net {
    // 0 marks a pooling step.
    let cfg = [
        64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0,
    ];
    let mut nodes = Vec::new();
    let mut in_ch = 3;
    for &c in &cfg {
        if c == 0 {
            nodes.push(Node::MaxPool(MaxPool2d {
                kernel: 2,
                stride: 2,
                padding: 0,
            }));
        } else {
            nodes.push(conv(rng, in_ch, c, 3, 1, 1, true));
            nodes.push(Node::Act(Activation::Relu));
            in_ch = c;
        }
    }
    nodes.push(Node::GlobalAvgPool);
    Net::new(nodes, 512)
}

fn inverted_residual(
    rng: &mut ChaCha8Rng,
    in_ch: usize,
    out_ch: usize,
    stride: usize,
    expand: usize,
) -> Vec<Node> {
    let hidden = in_ch * expand;
    let mut body = Vec::new();
    if expand != 1 {
        body.push(conv(rng, in_ch, hidden, 1, 1, 1, false));
        body.push(bn(hidden));
        body.push(Node::Act(Activation::Relu6));
    }
    body.push(conv(rng, hidden, hidden, 3, stride, hidden, false));
    body.push(bn(hidden));
    body.push(Node::Act(Activation::Relu6));
    body.push(conv(rng, hidden, out_ch, 1, 1, 1, false));
    body.push(bn(out_ch));
    if stride == 1 && in_ch == out_ch {
        vec![Node::Residual {
            body,
            shortcut: vec![],
        }]
    } else {
        body
    }
}

/// MobileNetV2: inverted residuals with linear bottlenecks, ReLU6 throughout.
fn mobilenet_v2(rng: &mut ChaCha8Rng) -> Net {
    let mut nodes = vec![
        conv(rng, 3, 32, 3, 2, 1, false),
        bn(32),
        Node::Act(Activation::Relu6),
    ];
    // (expansion, out channels, repeats, first stride)
    let cfg = [
        (1, 16, 1, 1),
        (6, 24, 2, 2),
        (6, 32, 3, 2),
        (6, 64, 4, 2),
        (6, 96, 3, 1),
        (6, 160, 3, 2),
        (6, 320, 1, 1),
    ];
    let mut in_ch = 32;
    for &(expand, out_ch, repeats, first_stride) in &cfg {
        for i in 0..repeats {
            let stride = if i == 0 { first_stride } else { 1 };
            nodes.extend(inverted_residual(rng, in_ch, out_ch, stride, expand));
            in_ch = out_ch;
        }
    }
    nodes.push(conv(rng, in_ch, 1280, 1, 1, 1, false));
    nodes.push(bn(1280));
    nodes.push(Node::Act(Activation::Relu6));
    nodes.push(Node::GlobalAvgPool);
    Net::new(nodes, 1280)
}

fn mbconv(
    rng: &mut ChaCha8Rng,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    expand: usize,
) -> Vec<Node> {
    let hidden = in_ch * expand;
    let se_ch = (in_ch / 4).max(1);
    let mut body = Vec::new();
    if expand != 1 {
        body.push(conv(rng, in_ch, hidden, 1, 1, 1, false));
        body.push(bn(hidden));
        body.push(Node::Act(Activation::Silu));
    }
    body.push(conv(rng, hidden, hidden, kernel, stride, hidden, false));
    body.push(bn(hidden));
    body.push(Node::Act(Activation::Silu));
    body.push(Node::SqueezeExcite(SqueezeExcite {
        squeeze: Conv2d::new(hidden, se_ch, 1, 1, 0, 1, true, rng),
        excite: Conv2d::new(se_ch, hidden, 1, 1, 0, 1, true, rng),
    }));
    body.push(conv(rng, hidden, out_ch, 1, 1, 1, false));
    body.push(bn(out_ch));
    if stride == 1 && in_ch == out_ch {
        vec![Node::Residual {
            body,
            shortcut: vec![],
        }]
    } else {
        body
    }
}

/// EfficientNet-B0: MBConv blocks with squeeze-excitation and SiLU.
fn efficientnet_b0(rng: &mut ChaCha8Rng) -> Net {
    let mut nodes = vec![
        conv(rng, 3, 32, 3, 2, 1, false),
        bn(32),
        Node::Act(Activation::Silu),
    ];
    // (expansion, out channels, repeats, kernel, first stride)
    let cfg = [
        (1, 16, 1, 3, 1),
        (6, 24, 2, 3, 2),
        (6, 40, 2, 5, 2),
        (6, 80, 3, 3, 2),
        (6, 112, 3, 5, 1),
        (6, 192, 4, 5, 2),
        (6, 320, 1, 3, 1),
    ];
    let mut in_ch = 32;
    for &(expand, out_ch, repeats, kernel, first_stride) in &cfg {
        for i in 0..repeats {
            let stride = if i == 0 { first_stride } else { 1 };
            nodes.extend(mbconv(rng, in_ch, out_ch, kernel, stride, expand));
            in_ch = out_ch;
        }
    }
    nodes.push(conv(rng, in_ch, 1280, 1, 1, 1, false));
    nodes.push(bn(1280));
    nodes.push(Node::Act(Activation::Silu));
    nodes.push(Node::GlobalAvgPool);
    Net::new(nodes, 1280)
}
