use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::layers::{self, BnForward, ConvGeom, BN_MOMENTUM};
use super::loss::cross_entropy;
use super::params::ModelParams;
use super::spec::{conv_out, ActShape, LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch normalization uses batch statistics.
    Train,
    /// Batch normalization uses running statistics; the pass is a pure
    /// function of parameters and input.
    Eval,
}

/// Which gradients a backward pass should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Needs {
    pub params: bool,
    pub input: bool,
}

impl Needs {
    pub const PARAMS: Needs = Needs {
        params: true,
        input: false,
    };
    pub const INPUT: Needs = Needs {
        params: false,
        input: true,
    };
    pub const BOTH: Needs = Needs {
        params: true,
        input: true,
    };
}

#[derive(Debug, Clone)]
enum Node {
    Conv {
        weight: usize,
        bias: Option<usize>,
        geom: ConvGeom,
    },
    Fc {
        weight: usize,
        bias: usize,
        inp: usize,
        out: usize,
    },
    Relu,
    MaxPool {
        planes: usize,
        h: usize,
        w: usize,
        size: usize,
    },
    AvgPool {
        planes: usize,
        h: usize,
        w: usize,
        size: usize,
    },
    BatchNorm {
        gamma: usize,
        beta: usize,
        mean: usize,
        var: usize,
        channels: usize,
        spatial: usize,
    },
    Flatten,
    Residual {
        body: Vec<Node>,
        shortcut: Vec<Node>,
    },
}

#[derive(Debug, Clone)]
enum Cache {
    Conv {
        input: Vec<f64>,
    },
    Fc {
        input: Vec<f64>,
    },
    Relu {
        output: Vec<f64>,
    },
    MaxPool {
        argmax: Vec<usize>,
        in_len: usize,
    },
    AvgPool,
    BatchNorm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Flatten,
    Residual {
        body: Vec<Cache>,
        shortcut: Vec<Cache>,
        output: Vec<f64>,
    },
}

/// Result of a forward pass: logits plus everything backward needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Tensor,
    /// Running-statistic replacements produced in training mode, as
    /// `(parameter index, new value)`. Apply with [`ModelParams::apply_updates`].
    pub bn_updates: Vec<(usize, Tensor)>,
    caches: Vec<Cache>,
    batch: usize,
    network_id: u64,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Aligned with `ModelParams::tensors`; buffers receive zero gradient.
    pub params: Option<Vec<Tensor>>,
    /// Gradient with respect to the network input batch.
    pub input: Option<Tensor>,
}

/// Loss value together with its gradients for one batch.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub logits: Tensor,
    pub grads: Gradients,
    pub bn_updates: Vec<(usize, Tensor)>,
}

impl ModelParams {
    pub fn apply_updates(&mut self, updates: Vec<(usize, Tensor)>) {
        for (i, t) in updates {
            self.tensors[i] = t;
        }
    }
}

/// A network spec compiled into an executable layer graph.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    nodes: Vec<Node>,
    id: u64,
    param_count: usize,
}

struct Builder<'a> {
    names: &'a [String],
}

impl Builder<'_> {
    fn idx(&self, name: &str) -> usize {
        self.names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("parameter layout is missing {name}"))
    }

    fn bn(&self, prefix: &str, channels: usize, spatial: usize) -> Node {
        Node::BatchNorm {
            gamma: self.idx(&format!("{prefix}.gamma")),
            beta: self.idx(&format!("{prefix}.beta")),
            mean: self.idx(&format!("{prefix}.running_mean")),
            var: self.idx(&format!("{prefix}.running_var")),
            channels,
            spatial,
        }
    }
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let shapes = spec.layer_shapes()?;
        let layout = super::params::param_layout(&spec);
        let names: Vec<String> = layout.iter().map(|p| p.name.clone()).collect();
        let b = Builder { names: &names };
        let [c0, h0, w0] = spec.input;
        let mut cur = ActShape::Image {
            c: c0,
            h: h0,
            w: w0,
        };
        let mut nodes = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let p = format!("layer{i}");
            let node = match (*layer, cur) {
                (
                    LayerSpec::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                        bias,
                    },
                    ActShape::Image { h, w, .. },
                ) => Node::Conv {
                    weight: b.idx(&format!("{p}.weight")),
                    bias: bias.then(|| b.idx(&format!("{p}.bias"))),
                    geom: ConvGeom {
                        c: in_channels,
                        h,
                        w,
                        filters: out_channels,
                        k: kernel,
                        stride,
                        pad: padding,
                        oh: conv_out(h, kernel, stride, padding).unwrap_or(0),
                        ow: conv_out(w, kernel, stride, padding).unwrap_or(0),
                    },
                },
                (
                    LayerSpec::Fc {
                        in_features,
                        out_features,
                    },
                    _,
                ) => Node::Fc {
                    weight: b.idx(&format!("{p}.weight")),
                    bias: b.idx(&format!("{p}.bias")),
                    inp: in_features,
                    out: out_features,
                },
                (LayerSpec::Relu, _) => Node::Relu,
                (LayerSpec::Flatten, _) => Node::Flatten,
                (LayerSpec::MaxPool { size }, ActShape::Image { c, h, w }) => Node::MaxPool {
                    planes: c,
                    h,
                    w,
                    size,
                },
                (LayerSpec::AvgPool { size }, ActShape::Image { c, h, w }) => Node::AvgPool {
                    planes: c,
                    h,
                    w,
                    size,
                },
                (LayerSpec::BatchNorm { channels }, s) => b.bn(&p, channels, s.numel() / channels),
                (
                    LayerSpec::ResidualBlock {
                        in_channels,
                        out_channels,
                        stride,
                    },
                    ActShape::Image { h, w, .. },
                ) => {
                    let (oh, ow) = (
                        conv_out(h, 3, stride, 1).unwrap_or(0),
                        conv_out(w, 3, stride, 1).unwrap_or(0),
                    );
                    let conv = |name: &str,
                                c: usize,
                                h: usize,
                                w: usize,
                                k: usize,
                                s: usize,
                                pad: usize| Node::Conv {
                        weight: b.idx(&format!("{p}.{name}.weight")),
                        bias: None,
                        geom: ConvGeom {
                            c,
                            h,
                            w,
                            filters: out_channels,
                            k,
                            stride: s,
                            pad,
                            oh: conv_out(h, k, s, pad).unwrap_or(0),
                            ow: conv_out(w, k, s, pad).unwrap_or(0),
                        },
                    };
                    let body = vec![
                        conv("conv1", in_channels, h, w, 3, stride, 1),
                        b.bn(&format!("{p}.bn1"), out_channels, oh * ow),
                        Node::Relu,
                        conv("conv2", out_channels, oh, ow, 3, 1, 1),
                        b.bn(&format!("{p}.bn2"), out_channels, oh * ow),
                    ];
                    let shortcut = if in_channels != out_channels || stride != 1 {
                        vec![
                            conv("shortcut", in_channels, h, w, 1, stride, 0),
                            b.bn(&format!("{p}.shortcut_bn"), out_channels, oh * ow),
                        ]
                    } else {
                        Vec::new()
                    };
                    Node::Residual { body, shortcut }
                }
                _ => return Err(Error::invalid(format!("layer {i} cannot be compiled"))),
            };
            nodes.push(node);
            cur = shapes[i];
        }
        let mut hasher = DefaultHasher::new();
        serde_json::to_string(&spec)
            .map_err(|e| Error::invalid(e.to_string()))?
            .hash(&mut hasher);
        Ok(Self {
            spec,
            nodes,
            id: hasher.finish(),
            param_count: layout.len(),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Expected `[batch, c, h, w]` input shape for a given batch size.
    pub fn input_shape(&self, batch: usize) -> Vec<usize> {
        let [c, h, w] = self.spec.input;
        vec![batch, c, h, w]
    }

    fn check_input(&self, params: &ModelParams, x: &Tensor) -> Result<usize> {
        if params.len() != self.param_count {
            return Err(Error::invalid(
                "parameter set does not belong to this network",
            ));
        }
        let shape = x.shape();
        if shape.len() != 4 || shape[1..] != self.spec.input[..] {
            let batch = shape.first().copied().unwrap_or(1);
            return Err(Error::shape(
                "network input",
                &self.input_shape(batch),
                shape,
            ));
        }
        Ok(shape[0])
    }

    pub fn forward(&self, params: &ModelParams, x: &Tensor, mode: Mode) -> Result<ForwardPass> {
        let batch = self.check_input(params, x)?;
        let mut caches = Vec::with_capacity(self.nodes.len());
        let mut bn_updates = Vec::new();
        let out = run(
            &self.nodes,
            params,
            x.data().to_vec(),
            batch,
            mode,
            Some(&mut caches),
            &mut bn_updates,
        );
        let classes = out.len() / batch;
        Ok(ForwardPass {
            logits: Tensor::new(vec![batch, classes], out)?,
            bn_updates,
            caches,
            batch,
            network_id: self.id,
        })
    }

    /// Eval-mode logits without retaining activations.
    pub fn logits(&self, params: &ModelParams, x: &Tensor) -> Result<Tensor> {
        let batch = self.check_input(params, x)?;
        let mut sink = Vec::new();
        let out = run(
            &self.nodes,
            params,
            x.data().to_vec(),
            batch,
            Mode::Eval,
            None,
            &mut sink,
        );
        let classes = out.len() / batch;
        Tensor::new(vec![batch, classes], out)
    }

    pub fn backward(
        &self,
        params: &ModelParams,
        pass: &ForwardPass,
        grad_logits: &Tensor,
        needs: Needs,
    ) -> Result<Gradients> {
        if pass.network_id != self.id || pass.caches.len() != self.nodes.len() {
            return Err(Error::invalid(
                "forward cache does not come from this network",
            ));
        }
        if grad_logits.shape() != pass.logits.shape() {
            return Err(Error::shape(
                "logit gradient",
                pass.logits.shape(),
                grad_logits.shape(),
            ));
        }
        if params.len() != self.param_count {
            return Err(Error::invalid(
                "parameter set does not belong to this network",
            ));
        }
        let mut grads = needs.params.then(|| params.zeros_like());
        let dx = back(
            &self.nodes,
            &pass.caches,
            params,
            grad_logits.data().to_vec(),
            pass.batch,
            grads.as_mut(),
            needs.input,
        );
        let input = if needs.input {
            Some(Tensor::new(self.input_shape(pass.batch), dx)?)
        } else {
            None
        };
        Ok(Gradients {
            params: grads,
            input,
        })
    }

    /// Mean cross-entropy of the batch and its gradients.
    pub fn loss_grad(
        &self,
        params: &ModelParams,
        x: &Tensor,
        labels: &[usize],
        mode: Mode,
        needs: Needs,
    ) -> Result<LossGrad> {
        let pass = self.forward(params, x, mode)?;
        let (loss, dlogits) = cross_entropy(&pass.logits, labels)?;
        let grads = self.backward(params, &pass, &dlogits, needs)?;
        Ok(LossGrad {
            loss,
            logits: pass.logits,
            grads,
            bn_updates: pass.bn_updates,
        })
    }
}

fn run(
    nodes: &[Node],
    params: &ModelParams,
    mut x: Vec<f64>,
    batch: usize,
    mode: Mode,
    mut caches: Option<&mut Vec<Cache>>,
    bn_updates: &mut Vec<(usize, Tensor)>,
) -> Vec<f64> {
    let t = |i: usize| params.tensors[i].data();
    for node in nodes {
        let keep = caches.is_some();
        let (y, cache) = match node {
            Node::Conv { weight, bias, geom } => {
                let y = layers::conv_forward(geom, batch, &x, t(*weight), bias.map(t));
                (y, Cache::Conv { input: x })
            }
            Node::Fc {
                weight,
                bias,
                inp,
                out,
            } => {
                let y = layers::fc_forward(batch, *inp, *out, &x, t(*weight), t(*bias));
                (y, Cache::Fc { input: x })
            }
            Node::Relu => {
                x.iter_mut().for_each(|v| *v = v.max(0.0));
                // The placeholder is discarded when no cache is being kept.
                let cache = if keep {
                    Cache::Relu { output: x.clone() }
                } else {
                    Cache::Flatten
                };
                (x, cache)
            }
            Node::MaxPool { planes, h, w, size } => {
                let (y, argmax) = layers::maxpool_forward(batch * planes, *h, *w, *size, &x);
                (
                    y,
                    Cache::MaxPool {
                        argmax,
                        in_len: x.len(),
                    },
                )
            }
            Node::AvgPool { planes, h, w, size } => (
                layers::avgpool_forward(batch * planes, *h, *w, *size, &x),
                Cache::AvgPool,
            ),
            Node::BatchNorm {
                gamma,
                beta,
                mean,
                var,
                channels,
                spatial,
            } => {
                let running = match mode {
                    Mode::Eval => Some((t(*mean), t(*var))),
                    Mode::Train => None,
                };
                let BnForward {
                    y,
                    xhat,
                    inv_std,
                    batch_stats,
                } = layers::bn_forward(
                    batch,
                    *channels,
                    *spatial,
                    &x,
                    t(*gamma),
                    t(*beta),
                    running,
                );
                let used = batch_stats.is_some();
                if let Some((bm, bv)) = batch_stats {
                    let blend = |old: &[f64], new: &[f64]| {
                        Tensor::vector(
                            old.iter()
                                .zip(new)
                                .map(|(o, n)| (1.0 - BN_MOMENTUM) * o + BN_MOMENTUM * n)
                                .collect(),
                        )
                    };
                    bn_updates.push((*mean, blend(t(*mean), &bm)));
                    bn_updates.push((*var, blend(t(*var), &bv)));
                }
                (
                    y,
                    Cache::BatchNorm {
                        xhat,
                        inv_std,
                        batch_stats: used,
                    },
                )
            }
            Node::Flatten => (x, Cache::Flatten),
            Node::Residual { body, shortcut } => {
                let mut body_c = Vec::new();
                let mut short_c = Vec::new();
                let mut out = run(
                    body,
                    params,
                    x.clone(),
                    batch,
                    mode,
                    keep.then_some(&mut body_c),
                    bn_updates,
                );
                let skip = if shortcut.is_empty() {
                    x
                } else {
                    run(
                        shortcut,
                        params,
                        x,
                        batch,
                        mode,
                        keep.then_some(&mut short_c),
                        bn_updates,
                    )
                };
                for (o, s) in out.iter_mut().zip(&skip) {
                    *o = (*o + s).max(0.0);
                }
                let output = if keep { out.clone() } else { Vec::new() };
                (
                    out,
                    Cache::Residual {
                        body: body_c,
                        shortcut: short_c,
                        output,
                    },
                )
            }
        };
        if let Some(c) = caches.as_deref_mut() {
            c.push(cache);
        }
        x = y;
    }
    x
}

fn accumulate(grads: &mut Option<&mut Vec<Tensor>>, idx: usize, g: &[f64]) {
    if let Some(gs) = grads.as_deref_mut() {
        for (a, b) in gs[idx].data_mut().iter_mut().zip(g) {
            *a += b;
        }
    }
}

fn back(
    nodes: &[Node],
    caches: &[Cache],
    params: &ModelParams,
    mut dy: Vec<f64>,
    batch: usize,
    mut grads: Option<&mut Vec<Tensor>>,
    need_input: bool,
) -> Vec<f64> {
    let t = |i: usize| params.tensors[i].data();
    for (pos, (node, cache)) in nodes.iter().zip(caches).enumerate().rev() {
        let want_dx = need_input || pos > 0;
        let want_params = grads.is_some();
        dy = match (node, cache) {
            (Node::Conv { weight, bias, geom }, Cache::Conv { input }) => {
                let (dx, dw, db) = layers::conv_backward(
                    geom,
                    batch,
                    input,
                    t(*weight),
                    &dy,
                    want_params,
                    want_dx,
                    bias.is_some(),
                );
                if want_params {
                    accumulate(&mut grads, *weight, &dw);
                    if let Some(b) = bias {
                        accumulate(&mut grads, *b, &db);
                    }
                }
                dx
            }
            (
                Node::Fc {
                    weight,
                    bias,
                    inp,
                    out,
                },
                Cache::Fc { input },
            ) => {
                let (dx, dw, db) = layers::fc_backward(
                    batch,
                    *inp,
                    *out,
                    input,
                    t(*weight),
                    &dy,
                    want_params,
                    want_dx,
                );
                if want_params {
                    accumulate(&mut grads, *weight, &dw);
                    accumulate(&mut grads, *bias, &db);
                }
                dx
            }
            (Node::Relu, Cache::Relu { output }) => {
                for (d, &o) in dy.iter_mut().zip(output) {
                    if o <= 0.0 {
                        *d = 0.0;
                    }
                }
                dy
            }
            (Node::MaxPool { .. }, Cache::MaxPool { argmax, in_len }) => {
                let mut dx = vec![0.0; *in_len];
                for (&i, &g) in argmax.iter().zip(&dy) {
                    dx[i] += g;
                }
                dx
            }
            (Node::AvgPool { planes, h, w, size }, Cache::AvgPool) => {
                layers::avgpool_backward(batch * planes, *h, *w, *size, &dy)
            }
            (
                Node::BatchNorm {
                    gamma,
                    beta,
                    channels,
                    spatial,
                    ..
                },
                Cache::BatchNorm {
                    xhat,
                    inv_std,
                    batch_stats,
                },
            ) => {
                let (dx, dg, db) = layers::bn_backward(
                    batch,
                    *channels,
                    *spatial,
                    xhat,
                    inv_std,
                    t(*gamma),
                    &dy,
                    *batch_stats,
                );
                if want_params {
                    accumulate(&mut grads, *gamma, &dg);
                    accumulate(&mut grads, *beta, &db);
                }
                dx
            }
            (Node::Flatten, Cache::Flatten) => dy,
            (
                Node::Residual { body, shortcut },
                Cache::Residual {
                    body: bc,
                    shortcut: sc,
                    output,
                },
            ) => {
                for (d, &o) in dy.iter_mut().zip(output) {
                    if o <= 0.0 {
                        *d = 0.0;
                    }
                }
                let mut dx = back(
                    body,
                    bc,
                    params,
                    dy.clone(),
                    batch,
                    grads.as_deref_mut(),
                    true,
                );
                let dskip = if shortcut.is_empty() {
                    dy
                } else {
                    back(shortcut, sc, params, dy, batch, grads.as_deref_mut(), true)
                };
                for (a, b) in dx.iter_mut().zip(&dskip) {
                    *a += b;
                }
                dx
            }
            _ => unreachable!("cache kind always matches its node"),
        };
    }
    dy
}
