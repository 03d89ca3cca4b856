use serde::{Deserialize, Serialize};

use super::spec::{LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    /// Running statistics are buffers, not optimized parameters.
    pub fn is_trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

/// Static description of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    /// Convolution and fully connected weights; biases and batch-norm
    /// parameters are never pruned.
    pub prunable: bool,
    /// The final 10-way fully connected weight.
    pub classifier: bool,
}

impl ParamInfo {
    fn new(name: String, kind: ParamKind, shape: Vec<usize>) -> Self {
        Self {
            prunable: kind == ParamKind::Weight,
            name,
            kind,
            shape,
            classifier: false,
        }
    }

    /// The weight viewed as `[filters, channels, height, width]`; fully
    /// connected `[out, in]` weights become `[out, in, 1, 1]`.
    pub fn as_4d(&self) -> [usize; 4] {
        match self.shape.as_slice() {
            [n, c, h, w] => [*n, *c, *h, *w],
            [n, c] => [*n, *c, 1, 1],
            [n] => [*n, 1, 1, 1],
            _ => [self.shape.iter().product(), 1, 1, 1],
        }
    }
}

/// Parameter layout implied by a network spec, in declaration order.
pub fn param_layout(spec: &NetworkSpec) -> Vec<ParamInfo> {
    let mut out = Vec::new();
    let push_bn = |out: &mut Vec<ParamInfo>, prefix: &str, c: usize| {
        out.push(ParamInfo::new(
            format!("{prefix}.gamma"),
            ParamKind::BnScale,
            vec![c],
        ));
        out.push(ParamInfo::new(
            format!("{prefix}.beta"),
            ParamKind::BnShift,
            vec![c],
        ));
        out.push(ParamInfo::new(
            format!("{prefix}.running_mean"),
            ParamKind::RunningMean,
            vec![c],
        ));
        out.push(ParamInfo::new(
            format!("{prefix}.running_var"),
            ParamKind::RunningVar,
            vec![c],
        ));
    };
    for (i, layer) in spec.layers.iter().enumerate() {
        let p = format!("layer{i}");
        match *layer {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                bias,
                ..
            } => {
                out.push(ParamInfo::new(
                    format!("{p}.weight"),
                    ParamKind::Weight,
                    vec![out_channels, in_channels, kernel, kernel],
                ));
                if bias {
                    out.push(ParamInfo::new(
                        format!("{p}.bias"),
                        ParamKind::Bias,
                        vec![out_channels],
                    ));
                }
            }
            LayerSpec::Fc {
                in_features,
                out_features,
            } => {
                out.push(ParamInfo::new(
                    format!("{p}.weight"),
                    ParamKind::Weight,
                    vec![out_features, in_features],
                ));
                out.push(ParamInfo::new(
                    format!("{p}.bias"),
                    ParamKind::Bias,
                    vec![out_features],
                ));
            }
            LayerSpec::BatchNorm { channels } => push_bn(&mut out, &p, channels),
            LayerSpec::ResidualBlock {
                in_channels,
                out_channels,
                stride,
            } => {
                out.push(ParamInfo::new(
                    format!("{p}.conv1.weight"),
                    ParamKind::Weight,
                    vec![out_channels, in_channels, 3, 3],
                ));
                push_bn(&mut out, &format!("{p}.bn1"), out_channels);
                out.push(ParamInfo::new(
                    format!("{p}.conv2.weight"),
                    ParamKind::Weight,
                    vec![out_channels, out_channels, 3, 3],
                ));
                push_bn(&mut out, &format!("{p}.bn2"), out_channels);
                if in_channels != out_channels || stride != 1 {
                    out.push(ParamInfo::new(
                        format!("{p}.shortcut.weight"),
                        ParamKind::Weight,
                        vec![out_channels, in_channels, 1, 1],
                    ));
                    push_bn(&mut out, &format!("{p}.shortcut_bn"), out_channels);
                }
            }
            LayerSpec::Relu
            | LayerSpec::MaxPool { .. }
            | LayerSpec::AvgPool { .. }
            | LayerSpec::Flatten => {}
        }
    }
    if let Some(last_fc) = spec
        .layers
        .iter()
        .rposition(|l| matches!(l, LayerSpec::Fc { .. }))
    {
        let name = format!("layer{last_fc}.weight");
        if let Some(info) = out.iter_mut().find(|p| p.name == name) {
            info.classifier = true;
        }
    }
    out
}

/// The full parameter set of a network: weights, biases, batch-norm
/// scale/shift and running statistics, aligned with [`param_layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub infos: Vec<ParamInfo>,
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Zero weights and biases; batch-norm scale and running variance at one.
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let infos = param_layout(spec);
        let tensors = infos
            .iter()
            .map(|info| {
                let fill = match info.kind {
                    ParamKind::BnScale | ParamKind::RunningVar => 1.0,
                    _ => 0.0,
                };
                Tensor::full(&info.shape, fill)
            })
            .collect();
        Self { infos, tensors }
    }

    pub fn from_tensors(spec: &NetworkSpec, tensors: Vec<Tensor>) -> Result<Self> {
        let infos = param_layout(spec);
        if infos.len() != tensors.len() {
            return Err(Error::invalid(format!(
                "network declares {} parameter tensors, got {}",
                infos.len(),
                tensors.len()
            )));
        }
        for (info, t) in infos.iter().zip(&tensors) {
            if info.shape != t.shape() {
                return Err(Error::shape(info.name.clone(), &info.shape, t.shape()));
            }
        }
        Ok(Self { infos, tensors })
    }

    /// Checks that the parameter shapes agree with `spec`.
    pub fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        let expected = param_layout(spec);
        if expected.len() != self.infos.len() {
            return Err(Error::invalid("parameter count does not match network"));
        }
        for (e, t) in expected.iter().zip(&self.tensors) {
            if e.shape != t.shape() {
                return Err(Error::shape(e.name.clone(), &e.shape, t.shape()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.infos.iter().position(|p| p.name == name)
    }

    /// Indices of prunable weight tensors.
    pub fn prunable(&self) -> impl Iterator<Item = usize> + '_ {
        self.infos
            .iter()
            .enumerate()
            .filter(|(_, p)| p.prunable)
            .map(|(i, _)| i)
    }

    /// Total number of scalar entries across prunable weights.
    pub fn prunable_count(&self) -> usize {
        self.prunable().map(|i| self.tensors[i].len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect()
    }
}
