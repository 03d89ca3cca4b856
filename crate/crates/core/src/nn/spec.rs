use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 10;

/// Architecture families, each scaled by an integer width factor `w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    MnistLenet,
    CifarLenet,
    CifarVgg,
    CifarResnet,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::MnistLenet,
        Family::CifarLenet,
        Family::CifarVgg,
        Family::CifarResnet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::MnistLenet => "mnist_lenet",
            Family::CifarLenet => "cifar_lenet",
            Family::CifarVgg => "cifar_vgg",
            Family::CifarResnet => "cifar_resnet",
        }
    }

    /// `[channels, height, width]` of one input image.
    pub fn input_shape(self) -> [usize; 3] {
        match self {
            Family::MnistLenet => [1, 28, 28],
            _ => [3, 32, 32],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown network family `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    Fc {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    /// Average pooling with a `size`x`size` window and matching stride.
    AvgPool {
        size: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Flatten,
    /// Basic two-convolution residual block with a 1x1 projection shortcut
    /// whenever the channel count or the stride changes.
    ResidualBlock {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    },
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, padding: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding,
            bias: true,
        }
    }

    pub fn fc(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Fc {
            in_features,
            out_features,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Fc { .. } => "fc",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::AvgPool { .. } => "avgpool",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Flatten => "flatten",
            LayerSpec::ResidualBlock { .. } => "residual_block",
        }
    }
}

/// Activation shape flowing between layers (batch dimension excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Image { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl ActShape {
    pub fn numel(self) -> usize {
        match self {
            ActShape::Image { c, h, w } => c * h * w,
            ActShape::Flat(n) => n,
        }
    }

    pub fn dims(self) -> Vec<usize> {
        match self {
            ActShape::Image { c, h, w } => vec![c, h, w],
            ActShape::Flat(n) => vec![n],
        }
    }
}

pub(crate) fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    (size + 2 * padding)
        .checked_sub(kernel)
        .map(|s| s / stride + 1)
}

/// Layer list plus the input geometry it expects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `None` for hand-assembled networks.
    pub family: Option<Family>,
    pub width: usize,
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn custom(input: [usize; 3], layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self {
            family: None,
            width: 1,
            input,
            layers,
        };
        spec.layer_shapes()?;
        Ok(spec)
    }

    /// Output shape of every layer, validating that consecutive shapes compose.
    pub fn layer_shapes(&self) -> Result<Vec<ActShape>> {
        let [c, h, w] = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::invalid("input extents must be positive"));
        }
        let mut cur = ActShape::Image { c, h, w };
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let bad =
                |msg: String| Error::invalid(format!("layer {i} ({}): {msg}", layer.kind_name()));
            cur = match (*layer, cur) {
                (
                    LayerSpec::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                        ..
                    },
                    ActShape::Image { c, h, w },
                ) => {
                    if in_channels != c || out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(bad(format!(
                            "expects {in_channels} channels, input has {c}"
                        )));
                    }
                    let oh = conv_out(h, kernel, stride, padding);
                    let ow = conv_out(w, kernel, stride, padding);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) => ActShape::Image {
                            c: out_channels,
                            h: oh,
                            w: ow,
                        },
                        _ => return Err(bad(format!("kernel {kernel} larger than padded input"))),
                    }
                }
                (
                    LayerSpec::ResidualBlock {
                        in_channels,
                        out_channels,
                        stride,
                    },
                    ActShape::Image { c, h, w },
                ) => {
                    if in_channels != c || out_channels == 0 || stride == 0 {
                        return Err(bad(format!(
                            "expects {in_channels} channels, input has {c}"
                        )));
                    }
                    ActShape::Image {
                        c: out_channels,
                        h: conv_out(h, 3, stride, 1).unwrap_or(0),
                        w: conv_out(w, 3, stride, 1).unwrap_or(0),
                    }
                }
                (
                    LayerSpec::Fc {
                        in_features,
                        out_features,
                    },
                    ActShape::Flat(n),
                ) => {
                    if in_features != n || out_features == 0 {
                        return Err(bad(format!(
                            "expects {in_features} features, input has {n}"
                        )));
                    }
                    ActShape::Flat(out_features)
                }
                (LayerSpec::Relu, s) => s,
                (LayerSpec::Flatten, s) => ActShape::Flat(s.numel()),
                (
                    LayerSpec::MaxPool { size } | LayerSpec::AvgPool { size },
                    ActShape::Image { c, h, w },
                ) => {
                    if size == 0 || size > h || size > w {
                        return Err(bad(format!("window {size} does not fit {h}x{w}")));
                    }
                    ActShape::Image {
                        c,
                        h: h / size,
                        w: w / size,
                    }
                }
                (LayerSpec::BatchNorm { channels }, s) => {
                    let have = match s {
                        ActShape::Image { c, .. } => c,
                        ActShape::Flat(n) => n,
                    };
                    if channels != have {
                        return Err(bad(format!(
                            "expects {channels} channels, input has {have}"
                        )));
                    }
                    s
                }
                (_, s) => return Err(bad(format!("cannot consume activation {s:?}"))),
            };
            if cur.numel() == 0 {
                return Err(bad("produces an empty activation".into()));
            }
            out.push(cur);
        }
        Ok(out)
    }

    pub fn output_shape(&self) -> Result<ActShape> {
        let [c, h, w] = self.input;
        Ok(self
            .layer_shapes()?
            .last()
            .copied()
            .unwrap_or(ActShape::Image { c, h, w }))
    }

    /// Filter counts of the convolutional layers, in order (residual blocks
    /// contribute their output width).
    pub fn conv_widths(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter_map(|l| match *l {
                LayerSpec::Conv2d { out_channels, .. } => Some(out_channels),
                LayerSpec::ResidualBlock { out_channels, .. } => Some(out_channels),
                _ => None,
            })
            .collect()
    }

    /// `(in, out)` of every fully connected layer, in order.
    pub fn fc_dims(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .filter_map(|l| match *l {
                LayerSpec::Fc {
                    in_features,
                    out_features,
                } => Some((in_features, out_features)),
                _ => None,
            })
            .collect()
    }
}

/// Expands a family at width scale `w` into its layer list.
///
/// Only filter counts and FC sizes are fixed by the family tables; the rest
/// is reconstructed:
/// * MNIST LeNet uses 5x5 convolutions with padding 2 and a 2x2 max-pool after
///   each convolution, so 28x28 shrinks to 7x7 and the flatten width is
///   `4w * 7 * 7 = 196w`.
/// * CIFAR LeNet uses unpadded 5x5 convolutions with 2x2 max-pools
///   (32 -> 28 -> 14 -> 10 -> 5), giving a flatten width of `16w * 25 = 400w`.
/// * VGG and ResNet use 3x3 convolutions with padding 1, each followed by
///   batch normalization and ReLU.
/// * ResNet follows the ResNet-18 layout with stage widths `(4, 8, 16, 32) * w`,
///   i.e. 1/16 of the standard `(64, 128, 256, 512)` at `w = 1`.
pub fn build_network(family: Family, w: usize) -> Result<NetworkSpec> {
    if w == 0 {
        return Err(Error::invalid("width scale must be at least 1"));
    }
    use LayerSpec as L;
    let layers = match family {
        Family::MnistLenet => vec![
            L::conv(1, 2 * w, 5, 2),
            L::Relu,
            L::MaxPool { size: 2 },
            L::conv(2 * w, 4 * w, 5, 2),
            L::Relu,
            L::MaxPool { size: 2 },
            L::Flatten,
            L::fc(196 * w, 64 * w),
            L::Relu,
            L::fc(64 * w, NUM_CLASSES),
        ],
        Family::CifarLenet => vec![
            L::conv(3, 6 * w, 5, 0),
            L::Relu,
            L::MaxPool { size: 2 },
            L::conv(6 * w, 16 * w, 5, 0),
            L::Relu,
            L::MaxPool { size: 2 },
            L::Flatten,
            L::fc(400 * w, 120 * w),
            L::Relu,
            L::fc(120 * w, 84 * w),
            L::Relu,
            L::fc(84 * w, NUM_CLASSES),
        ],
        Family::CifarVgg => {
            // 'M' marks a max-pool.
            let plan: [Option<usize>; 18] = [
                Some(4),
                Some(4),
                None,
                Some(8),
                Some(8),
                None,
                Some(16),
                Some(16),
                Some(16),
                None,
                Some(32),
                Some(32),
                Some(32),
                None,
                Some(32),
                Some(32),
                Some(32),
                None,
            ];
            let mut layers = Vec::new();
            let mut c = 3;
            for step in plan {
                match step {
                    Some(f) => {
                        let out = f * w;
                        layers.push(L::Conv2d {
                            in_channels: c,
                            out_channels: out,
                            kernel: 3,
                            stride: 1,
                            padding: 1,
                            bias: false,
                        });
                        layers.push(L::BatchNorm { channels: out });
                        layers.push(L::Relu);
                        c = out;
                    }
                    None => layers.push(L::MaxPool { size: 2 }),
                }
            }
            layers.push(L::AvgPool { size: 1 });
            layers.push(L::Flatten);
            layers.push(L::fc(32 * w, NUM_CLASSES));
            layers
        }
        Family::CifarResnet => {
            let base = 4 * w;
            let mut layers = vec![
                L::Conv2d {
                    in_channels: 3,
                    out_channels: base,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                    bias: false,
                },
                L::BatchNorm { channels: base },
                L::Relu,
            ];
            let mut c = base;
            for (stage, mult) in [1, 2, 4, 8].into_iter().enumerate() {
                let out = base * mult;
                for block in 0..2 {
                    let stride = if stage > 0 && block == 0 { 2 } else { 1 };
                    layers.push(L::ResidualBlock {
                        in_channels: c,
                        out_channels: out,
                        stride,
                    });
                    c = out;
                }
            }
            layers.push(L::AvgPool { size: 4 });
            layers.push(L::Flatten);
            layers.push(L::fc(c, NUM_CLASSES));
            layers
        }
    };
    let spec = NetworkSpec {
        family: Some(family),
        width: w,
        input: family.input_shape(),
        layers,
    };
    match spec.output_shape()? {
        ActShape::Flat(NUM_CLASSES) => Ok(spec),
        other => Err(Error::invalid(format!(
            "network ends in {other:?}, expected 10 logits"
        ))),
    }
}
