//! Surviving-subnetwork extraction for the inherited-initialization runs.

use crate::error::{Error, Result};
use crate::nn::{ActShape, LayerSpec, ModelParams, NetworkSpec};
use crate::numerics::Tensor;
use crate::sparsity::SparsityMask;

/// Units of a `[filters, ...]` weight whose mask row has any nonzero entry.
fn live_rows(mask: Option<&Tensor>, rows: usize) -> Vec<usize> {
    match mask {
        None => (0..rows).collect(),
        Some(m) => {
            let per = m.len() / rows;
            (0..rows)
                .filter(|&r| m.data()[r * per..(r + 1) * per].iter().any(|&v| v != 0.0))
                .collect()
        }
    }
}

/// Copies `t[rows][cols][rest]` for the given row and column indices.
fn gather_2d(t: &Tensor, rows: &[usize], cols: &[usize]) -> Result<Tensor> {
    let shape = t.shape();
    let (r, c) = (shape[0], shape[1]);
    let rest: usize = shape[2..].iter().product();
    let mut data = Vec::with_capacity(rows.len() * cols.len() * rest);
    for &i in rows {
        for &j in cols {
            let at = (i * c + j) * rest;
            data.extend_from_slice(&t.data()[at..at + rest]);
        }
    }
    debug_assert!(rows.iter().all(|&i| i < r));
    let mut out = vec![rows.len(), cols.len()];
    out.extend_from_slice(&shape[2..]);
    Tensor::new(out, data)
}

fn gather_1d(t: &Tensor, idx: &[usize]) -> Tensor {
    Tensor::vector(idx.iter().map(|&i| t.data()[i]).collect())
}

/// The dense network formed by the units that survive `mask`, with
/// weights copied from `params` (typically the saved initialization).
///
/// A unit survives when its mask row is not all zero. Inputs of each layer
/// follow the survivors of the layer before it, so only filter-style masks
/// shrink anything. Residual blocks are rejected.
pub fn shrink_to_support(
    spec: &NetworkSpec,
    params: &ModelParams,
    mask: &SparsityMask,
) -> Result<(NetworkSpec, ModelParams)> {
    params.check_against(spec)?;
    mask.check_shapes(params)?;
    let shapes = spec.layer_shapes()?;
    let mut live: Vec<usize> = (0..spec.input[0]).collect();
    let mut layers = Vec::with_capacity(spec.layers.len());
    let mut tensors = Vec::with_capacity(params.len());
    let mut next = 0;
    let mut take = |name: &str| -> Result<(usize, &Tensor)> {
        let i = next;
        let info = params
            .infos
            .get(i)
            .ok_or_else(|| Error::invalid(format!("missing parameter for {name}")))?;
        if !info.name.ends_with(name) {
            return Err(Error::invalid(format!(
                "expected {name}, found {}",
                info.name
            )));
        }
        next += 1;
        Ok((i, &params.tensors[i]))
    };
    for (li, layer) in spec.layers.iter().enumerate() {
        match *layer {
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
                bias,
                ..
            } => {
                let (wi, w) = take("weight")?;
                let rows = live_rows(mask.get(wi), out_channels);
                if rows.is_empty() {
                    return Err(Error::invalid(format!(
                        "layer {li} has no surviving filters"
                    )));
                }
                tensors.push(gather_2d(w, &rows, &live)?);
                if bias {
                    let (_, b) = take("bias")?;
                    tensors.push(gather_1d(b, &rows));
                }
                layers.push(LayerSpec::Conv2d {
                    in_channels: live.len(),
                    out_channels: rows.len(),
                    kernel,
                    stride,
                    padding,
                    bias,
                });
                live = rows;
            }
            LayerSpec::Fc { out_features, .. } => {
                let (wi, w) = take("weight")?;
                let rows = if params.infos[wi].classifier {
                    (0..out_features).collect()
                } else {
                    live_rows(mask.get(wi), out_features)
                };
                if rows.is_empty() {
                    return Err(Error::invalid(format!("layer {li} has no surviving units")));
                }
                tensors.push(gather_2d(w, &rows, &live)?);
                let (_, b) = take("bias")?;
                tensors.push(gather_1d(b, &rows));
                layers.push(LayerSpec::fc(live.len(), rows.len()));
                live = rows;
            }
            LayerSpec::BatchNorm { .. } => {
                for name in ["gamma", "beta", "running_mean", "running_var"] {
                    let (_, t) = take(name)?;
                    tensors.push(gather_1d(t, &live));
                }
                layers.push(LayerSpec::BatchNorm {
                    channels: live.len(),
                });
            }
            LayerSpec::Flatten => {
                let before = if li == 0 {
                    let [c, h, w] = spec.input;
                    ActShape::Image { c, h, w }
                } else {
                    shapes[li - 1]
                };
                if let ActShape::Image { h, w, .. } = before {
                    let hw = h * w;
                    live = live.iter().flat_map(|&c| c * hw..(c + 1) * hw).collect();
                }
                layers.push(LayerSpec::Flatten);
            }
            LayerSpec::Relu | LayerSpec::MaxPool { .. } | LayerSpec::AvgPool { .. } => {
                layers.push(*layer)
            }
            LayerSpec::ResidualBlock { .. } => {
                return Err(Error::invalid(
                    "shrunken extraction does not support residual blocks; use the masked variant",
                ))
            }
        }
    }
    let small = NetworkSpec::custom(spec.input, layers)?;
    let small_params = ModelParams::from_tensors(&small, tensors)?;
    Ok((small, small_params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_network, Family};
    use crate::numerics::Rng;
    use crate::optim::{init_params, InitMethod};
    use crate::sparsity::{Scheme, SparsityConstraint};

    #[test]
    fn filter_mask_on_wide_lenet_gives_narrow_lenet() {
        let big = build_network(Family::MnistLenet, 4).unwrap();
        let p = init_params(&big, InitMethod::KaimingUniform, &Rng::new(3));
        let c = SparsityConstraint::uniform(&p, Scheme::Filter, 0.25).unwrap();
        let mask = c.support(&p).unwrap();
        let (small, sp) = shrink_to_support(&big, &p, &mask).unwrap();
        assert_eq!(
            small.layers,
            build_network(Family::MnistLenet, 1).unwrap().layers
        );
        // each kept first-layer filter is copied verbatim
        let per = 25;
        for row in sp.tensors[0].data().chunks(per) {
            assert!(p.tensors[0].data().chunks(per).any(|o| o == row));
        }
    }

    #[test]
    fn dense_mask_is_identity() {
        let spec = build_network(Family::MnistLenet, 2).unwrap();
        let p = init_params(&spec, InitMethod::XavierNormal, &Rng::new(1));
        let (s, q) = shrink_to_support(&spec, &p, &SparsityMask::dense(&p)).unwrap();
        assert_eq!(s.layers, spec.layers);
        assert_eq!(q, p);
    }

    #[test]
    fn residual_rejected() {
        let spec = build_network(Family::CifarResnet, 1).unwrap();
        let p = ModelParams::zeros(&spec);
        assert!(shrink_to_support(&spec, &p, &SparsityMask::dense(&p)).is_err());
    }
}
