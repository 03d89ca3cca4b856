//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robustprune::nn::{cross_entropy, LayerSpec, Mode, ModelParams, Needs, Network, NetworkSpec};
use robustprune::numerics::Tensor;
use robustprune::sparsity::{quadratic_penalty, Scheme};

pub const FD_STEP: f64 = 1e-5;
/// Entries smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// A small network around one layer kind with random weights and inputs.
pub struct Instance {
    pub spec: NetworkSpec,
    pub params: ModelParams,
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub mode: Mode,
}

pub const LAYER_KINDS: [&str; 7] = [
    "conv2d",
    "fc",
    "batchnorm",
    "maxpool",
    "avgpool",
    "relu",
    "residual",
];

fn random_params(spec: &NetworkSpec, r: &mut ChaCha8Rng) -> ModelParams {
    let mut p = ModelParams::zeros(spec);
    for (info, t) in p.infos.iter().zip(p.tensors.iter_mut()) {
        let name = info.name.as_str();
        for v in t.data_mut() {
            *v = if name.ends_with("gamma") {
                r.gen_range(0.5..1.5)
            } else if name.ends_with("running_var") {
                r.gen_range(0.5..2.0)
            } else {
                r.gen_range(-0.5..0.5)
            };
        }
    }
    p
}

/// Draws a random instance of `kind`; every layer ends in a small
/// classifier so the scalar under test is a cross-entropy.
pub fn instance(kind: &str, seed: u64) -> Instance {
    let mut r = rng(seed);
    let classes = r.gen_range(2..5);
    let batch = r.gen_range(2..5);
    let c = r.gen_range(1..4);
    let (h, w) = (2 * r.gen_range(2..4), 2 * r.gen_range(2..4));
    let mut mode = Mode::Eval;
    let (input, mut layers) = match kind {
        "conv2d" => {
            let k = [1, 3][r.gen_range(0..2)];
            let spec = LayerSpec::Conv2d {
                in_channels: c,
                out_channels: r.gen_range(1..4),
                kernel: k,
                stride: r.gen_range(1..3),
                padding: r.gen_range(0..2),
                bias: r.gen_bool(0.5),
            };
            ([c, h, w], vec![spec])
        }
        "fc" => {
            let d = r.gen_range(2..9);
            (
                [1, 1, d],
                vec![
                    LayerSpec::Flatten,
                    LayerSpec::fc(d, r.gen_range(2..7)),
                    LayerSpec::Flatten,
                ],
            )
        }
        "batchnorm" => {
            mode = Mode::Train;
            ([c, h, w], vec![LayerSpec::BatchNorm { channels: c }])
        }
        "maxpool" => ([c, h, w], vec![LayerSpec::MaxPool { size: 2 }]),
        "avgpool" => ([c, h, w], vec![LayerSpec::AvgPool { size: 2 }]),
        "relu" => ([c, h, w], vec![LayerSpec::Relu]),
        "residual" => {
            mode = if r.gen_bool(0.5) {
                Mode::Train
            } else {
                Mode::Eval
            };
            let out = r.gen_range(1..4);
            (
                [c, h, w],
                vec![LayerSpec::ResidualBlock {
                    in_channels: c,
                    out_channels: out,
                    stride: r.gen_range(1..3),
                }],
            )
        }
        other => panic!("unknown layer kind {other}"),
    };
    layers.push(LayerSpec::Flatten);
    let probe = NetworkSpec::custom(input, layers.clone()).expect("valid probe");
    let feat = probe.output_shape().expect("shape").numel();
    layers.push(LayerSpec::fc(feat, classes));
    let spec = NetworkSpec::custom(input, layers).expect("valid instance");
    let params = random_params(&spec, &mut r);
    let n = batch * input.iter().product::<usize>();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            if kind == "relu" {
                // keep every input away from the kink
                let m = r.gen_range(0.01..1.0);
                if r.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            } else {
                r.gen_range(-1.0..1.0)
            }
        })
        .collect();
    let mut shape = vec![batch];
    shape.extend_from_slice(&input);
    let x = Tensor::new(shape, data).expect("input");
    let labels = (0..batch).map(|_| r.gen_range(0..classes)).collect();
    Instance {
        spec,
        params,
        x,
        labels,
        mode,
    }
}

fn loss(net: &Network, p: &ModelParams, x: &Tensor, labels: &[usize], mode: Mode) -> f64 {
    let pass = net.forward(p, x, mode).expect("forward");
    cross_entropy(&pass.logits, labels).expect("loss").0
}

/// Largest relative error between backward and central differences over
/// every trainable parameter entry and every input entry.
pub fn gradient_error(inst: &Instance) -> f64 {
    let net = Network::new(inst.spec.clone()).expect("network");
    let lg = net
        .loss_grad(&inst.params, &inst.x, &inst.labels, inst.mode, Needs::BOTH)
        .expect("gradients");
    let gp = lg.grads.params.expect("param grads");
    let gx = lg.grads.input.expect("input grads");
    let mut worst: f64 = 0.0;
    for (i, info) in inst.params.infos.iter().enumerate() {
        if !info.kind.is_trainable() {
            continue;
        }
        for j in 0..inst.params.tensors[i].len() {
            let mut p = inst.params.clone();
            let v = p.tensors[i].data()[j];
            p.tensors[i].data_mut()[j] = v + FD_STEP;
            let up = loss(&net, &p, &inst.x, &inst.labels, inst.mode);
            p.tensors[i].data_mut()[j] = v - FD_STEP;
            let down = loss(&net, &p, &inst.x, &inst.labels, inst.mode);
            let fd = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(gp[i].data()[j], fd));
        }
    }
    for j in 0..inst.x.len() {
        let mut x = inst.x.clone();
        let v = x.data()[j];
        x.data_mut()[j] = v + FD_STEP;
        let up = loss(&net, &inst.params, &x, &inst.labels, inst.mode);
        x.data_mut()[j] = v - FD_STEP;
        let down = loss(&net, &inst.params, &x, &inst.labels, inst.mode);
        worst = worst.max(rel_err(gx.data()[j], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

/// Same check for the augmented-Lagrangian penalty on a random tensor.
pub fn penalty_gradient_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.gen_range(1..40);
    let draw =
        |r: &mut ChaCha8Rng| Tensor::vector((0..n).map(|_| r.gen_range(-2.0..2.0)).collect());
    let (theta, z, u) = (draw(&mut r), draw(&mut r), draw(&mut r));
    let rho = 10f64.powf(r.gen_range(-3.0..1.0));
    let (_, g) = quadratic_penalty(&theta, &z, &u, rho);
    let mut worst: f64 = 0.0;
    for j in 0..n {
        let mut t = theta.clone();
        let v = t.data()[j];
        t.data_mut()[j] = v + FD_STEP;
        let up = quadratic_penalty(&t, &z, &u, rho).0;
        t.data_mut()[j] = v - FD_STEP;
        let down = quadratic_penalty(&t, &z, &u, rho).0;
        worst = worst.max(rel_err(g.data()[j], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

/// Unit id of every entry of a `[n, ...]` tensor, written without the
/// library's helpers.
pub fn unit_of(shape: &[usize], scheme: Scheme) -> Vec<usize> {
    let n = shape[0];
    let total: usize = shape.iter().product();
    let per = total / n;
    (0..total)
        .map(|i| match scheme {
            Scheme::Filter => i / per,
            Scheme::Column => i % per,
            Scheme::Irregular => i,
        })
        .collect()
}

/// Minimum squared distance from `v` to any tensor supported on at most
/// `budget` units, by enumerating every support.
pub fn exhaustive_min_distance(v: &Tensor, scheme: Scheme, budget: usize) -> f64 {
    let units = unit_of(v.shape(), scheme);
    let count = units.iter().max().map_or(0, |m| m + 1);
    assert!(count <= 16, "exhaustive search is for small unit counts");
    let mut best = f64::INFINITY;
    for subset in 0u32..(1 << count) {
        if subset.count_ones() as usize > budget {
            continue;
        }
        let d: f64 = v
            .data()
            .iter()
            .zip(&units)
            .filter(|(_, &u)| subset & (1 << u) == 0)
            .map(|(x, _)| x * x)
            .sum();
        best = best.min(d);
    }
    best
}

pub fn squared_distance(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// A random weight-shaped tensor with at most `max_units` units under
/// `scheme`, sometimes with repeated magnitudes to exercise ties.
pub fn small_weight(seed: u64, scheme: Scheme, max_units: usize) -> Tensor {
    let mut r = rng(seed);
    let shape: Vec<usize> = loop {
        let s = if r.gen_bool(0.5) {
            vec![r.gen_range(1..5), r.gen_range(1..4)]
        } else {
            vec![
                r.gen_range(1..4),
                r.gen_range(1..3),
                r.gen_range(1..3),
                r.gen_range(1..3),
            ]
        };
        let units = match scheme {
            Scheme::Filter => s[0],
            Scheme::Column => s[1..].iter().product(),
            Scheme::Irregular => s.iter().product(),
        };
        if units <= max_units {
            break s;
        }
    };
    let n: usize = shape.iter().product();
    let ties = r.gen_bool(0.3);
    let data = (0..n)
        .map(|_| {
            if ties {
                [-1.0, 0.5, 1.0, 0.0][r.gen_range(0..4)]
            } else {
                r.gen_range(-1.0..1.0)
            }
        })
        .collect();
    Tensor::new(shape, data).expect("tensor")
}

/// Projection computed from first principles: rank units by squared norm
/// (stable, so equal scores keep index order) and zero all but the top
/// `budget`.
pub fn reference_projection(v: &Tensor, scheme: Scheme, budget: usize) -> Tensor {
    let units = unit_of(v.shape(), scheme);
    let count = units.iter().max().map_or(0, |m| m + 1);
    let mut score = vec![0.0; count];
    for (x, &u) in v.data().iter().zip(&units) {
        score[u] += x * x;
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&a, &b| score[b].partial_cmp(&score[a]).expect("finite scores"));
    let mut keep = vec![false; count];
    for &u in order.iter().take(budget) {
        keep[u] = true;
    }
    let data = v
        .data()
        .iter()
        .zip(&units)
        .map(|(&x, &u)| if keep[u] { x } else { 0.0 })
        .collect();
    Tensor::new(v.shape().to_vec(), data).expect("same shape")
}

/// A small conv net on 8x8 single-channel inputs for end-to-end runs.
pub fn small_convnet() -> NetworkSpec {
    NetworkSpec::custom(
        [1, 8, 8],
        vec![
            LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: 6,
                kernel: 3,
                stride: 1,
                padding: 1,
                bias: true,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Flatten,
            LayerSpec::fc(96, 16),
            LayerSpec::Relu,
            LayerSpec::fc(16, 10),
        ],
    )
    .expect("valid small net")
}
