use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ModelParams, NetworkSpec, ParamKind};
use crate::numerics::{Rng, Stream, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    Uniform,
    Normal,
    XavierUniform,
    XavierNormal,
    KaimingUniform,
    KaimingNormal,
    Orthogonal,
}

impl InitMethod {
    pub const ALL: [InitMethod; 7] = [
        InitMethod::Uniform,
        InitMethod::Normal,
        InitMethod::XavierUniform,
        InitMethod::XavierNormal,
        InitMethod::KaimingUniform,
        InitMethod::KaimingNormal,
        InitMethod::Orthogonal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InitMethod::Uniform => "uniform",
            InitMethod::Normal => "normal",
            InitMethod::XavierUniform => "xavier_uniform",
            InitMethod::XavierNormal => "xavier_normal",
            InitMethod::KaimingUniform => "kaiming_uniform",
            InitMethod::KaimingNormal => "kaiming_normal",
            InitMethod::Orthogonal => "orthogonal",
        }
    }
}

impl fmt::Display for InitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InitMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown init method `{s}`")))
    }
}

/// Parameters of the two scale-free methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitRanges {
    /// `uniform` draws from `U(-bound, bound)`.
    pub uniform_bound: f64,
    /// `normal` draws from `N(0, std^2)`.
    pub normal_std: f64,
}

impl Default for InitRanges {
    fn default() -> Self {
        Self {
            uniform_bound: 0.1,
            normal_std: 0.01,
        }
    }
}

/// `(fan_in, fan_out)` of a `[out, in, k, k]` or `[out, in]` weight.
pub(crate) fn fans(shape: &[usize]) -> (usize, usize) {
    let receptive: usize = shape.iter().skip(2).product();
    let out = shape[0];
    let inp = shape.get(1).copied().unwrap_or(1);
    (inp * receptive, out * receptive)
}

/// Fresh parameters for `spec`: weights drawn per `method`, biases zero,
/// batch-norm scale one and shift zero, running statistics `(0, 1)`.
pub fn init_params(spec: &NetworkSpec, method: InitMethod, rng: &Rng) -> ModelParams {
    init_params_with(spec, method, InitRanges::default(), rng)
}

pub fn init_params_with(
    spec: &NetworkSpec,
    method: InitMethod,
    ranges: InitRanges,
    rng: &Rng,
) -> ModelParams {
    let mut params = ModelParams::zeros(spec);
    for i in 0..params.len() {
        if params.infos[i].kind != ParamKind::Weight {
            continue;
        }
        let mut r = rng.substream(Stream::Init, i as u64);
        let shape = params.infos[i].shape.clone();
        params.tensors[i] = draw(&shape, method, ranges, &mut r);
    }
    params
}

fn draw(shape: &[usize], method: InitMethod, ranges: InitRanges, rng: &mut Rng) -> Tensor {
    let (fan_in, fan_out) = fans(shape);
    let (fi, fo) = (fan_in as f64, fan_out as f64);
    let gain = 2f64.sqrt(); // ReLU gain
    let uniform = |rng: &mut Rng, b: f64| Tensor::from_fn(shape, |_| rng.uniform(-b, b));
    let normal = |rng: &mut Rng, s: f64| Tensor::from_fn(shape, |_| rng.normal(0.0, s));
    match method {
        InitMethod::Uniform => uniform(rng, ranges.uniform_bound),
        InitMethod::Normal => normal(rng, ranges.normal_std),
        InitMethod::XavierUniform => uniform(rng, (6.0 / (fi + fo)).sqrt()),
        InitMethod::XavierNormal => normal(rng, (2.0 / (fi + fo)).sqrt()),
        InitMethod::KaimingUniform => uniform(rng, gain * (3.0 / fi).sqrt()),
        InitMethod::KaimingNormal => normal(rng, gain / fi.sqrt()),
        InitMethod::Orthogonal => orthogonal(shape, rng),
    }
}

/// Weight flattened to `[rows, cols]` with orthonormal rows or columns,
/// whichever is fewer, from the QR factorization of a Gaussian matrix with
/// the signs of `diag(R)` folded into `Q`.
fn orthogonal(shape: &[usize], rng: &mut Rng) -> Tensor {
    let rows = shape[0];
    let cols: usize = shape.iter().skip(1).product::<usize>().max(1);
    let (tall_r, tall_c) = if rows >= cols {
        (rows, cols)
    } else {
        (cols, rows)
    };
    let a = DMatrix::from_fn(tall_r, tall_c, |_, _| rng.normal(0.0, 1.0));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..tall_c {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let q = if rows >= cols { q } else { q.transpose() };
    Tensor::from_fn(shape, |flat| {
        let (i, j) = (flat / cols, flat % cols);
        q[(i, j)]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_network, Family, LayerSpec};

    #[test]
    fn xavier_uniform_within_bound() {
        let spec = build_network(Family::MnistLenet, 2).unwrap();
        let p = init_params(&spec, InitMethod::XavierUniform, &Rng::new(4));
        for i in p.prunable() {
            let (fi, fo) = fans(&p.infos[i].shape);
            let bound = (6.0 / (fi + fo) as f64).sqrt();
            assert!(p.tensors[i].max_abs() <= bound);
            // a few thousand draws should approach the bound
            if p.tensors[i].len() > 1000 {
                assert!(p.tensors[i].max_abs() > 0.9 * bound);
            }
        }
    }

    #[test]
    fn orthogonal_square_fc() {
        let spec = NetworkSpec::custom([1, 4, 4], vec![LayerSpec::Flatten, LayerSpec::fc(16, 16)])
            .unwrap();
        let p = init_params(&spec, InitMethod::Orthogonal, &Rng::new(9));
        let w = DMatrix::from_row_slice(16, 16, p.tensors[0].data());
        let wtw = w.transpose() * &w;
        for i in 0..16 {
            for j in 0..16 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((wtw[(i, j)] - target).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn orthogonal_wide_has_orthonormal_rows() {
        let mut rng = Rng::new(2);
        let t = orthogonal(&[3, 2, 2, 2], &mut rng);
        let w = DMatrix::from_row_slice(3, 8, t.data());
        let wwt = &w * w.transpose();
        for i in 0..3 {
            for j in 0..3 {
                assert!((wwt[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn same_seed_same_params() {
        let spec = build_network(Family::MnistLenet, 1).unwrap();
        for m in InitMethod::ALL {
            let a = init_params(&spec, m, &Rng::new(11));
            let b = init_params(&spec, m, &Rng::new(11));
            assert_eq!(a, b, "{m}");
            assert!(a.tensors.iter().all(|t| t.all_finite()));
        }
    }

    #[test]
    fn biases_zero() {
        let spec = build_network(Family::MnistLenet, 1).unwrap();
        let p = init_params(&spec, InitMethod::KaimingNormal, &Rng::new(1));
        for (info, t) in p.infos.iter().zip(&p.tensors) {
            if info.kind == ParamKind::Bias {
                assert_eq!(t.count_nonzero(), 0);
            }
        }
    }
}
