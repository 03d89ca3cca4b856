//! Binary checkpoint format.
//!
//! ```text
//! offset 0   8 bytes   magic "RPCKPT01"
//! offset 8   8 bytes   header length L, u64 little-endian
//! offset 16  L bytes   UTF-8 JSON header (network spec, metadata, tensor table)
//! offset 16+L          tensor payloads, f64 little-endian, in tensor-table order
//! ```
//!
//! The tensor table lists every parameter tensor in declaration order,
//! followed by one entry per masked parameter.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::sparsity::SparsityMask;

pub const MAGIC: &[u8; 8] = b"RPCKPT01";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: usize,
    /// Free-form tag such as `natural`, `adversarial`, `admm_pruned`.
    pub training: String,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: ModelParams,
    pub mask: Option<SparsityMask>,
    pub meta: CheckpointMeta,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TensorRole {
    Param,
    Mask,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    role: TensorRole,
    param: usize,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    spec: NetworkSpec,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn new(spec: NetworkSpec, params: ModelParams, meta: CheckpointMeta) -> Self {
        Self {
            spec,
            params,
            mask: None,
            meta,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors: Vec<TensorEntry> = self
            .params
            .infos
            .iter()
            .enumerate()
            .map(|(i, info)| TensorEntry {
                name: info.name.clone(),
                role: TensorRole::Param,
                param: i,
                shape: info.shape.clone(),
            })
            .collect();
        let mut payload: Vec<&Tensor> = self.params.tensors.iter().collect();
        if let Some(mask) = &self.mask {
            for (i, m) in mask.iter() {
                tensors.push(TensorEntry {
                    name: format!("{}.mask", self.params.infos[i].name),
                    role: TensorRole::Mask,
                    param: i,
                    shape: m.shape().to_vec(),
                });
                payload.push(m);
            }
        }
        let header = Header {
            version: 1,
            spec: self.spec.clone(),
            meta: self.meta.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::invalid(e.to_string()))?;
        let body: usize = payload.iter().map(|t| t.len() * 8).sum();
        let mut out = Vec::with_capacity(16 + json.len() + body);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in payload {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(Error::parse(0, "missing RPCKPT01 magic"));
        }
        let len_bytes: [u8; 8] = bytes
            .get(8..16)
            .and_then(|s| s.try_into().ok())
            .ok_or_else(|| Error::parse(8, "truncated header length"))?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| {
                Error::parse(8, format!("header length {header_len} exceeds file size"))
            })?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| Error::parse(16, format!("malformed header: {e}")))?;
        if header.version != 1 {
            return Err(Error::parse(
                16,
                format!("unsupported version {}", header.version),
            ));
        }
        header
            .spec
            .layer_shapes()
            .map_err(|e| Error::parse(16, e.to_string()))?;

        let mut offset = header_end;
        let mut params = ModelParams::zeros(&header.spec);
        let mut masks: Vec<Option<Tensor>> = vec![None; params.len()];
        let mut seen = vec![false; params.len()];
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            let end = offset
                .checked_add(n * 8)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| {
                    Error::parse(offset as u64, format!("truncated tensor `{}`", entry.name))
                })?;
            let data: Vec<f64> = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            let expected = params
                .infos
                .get(entry.param)
                .map(|p| p.shape.clone())
                .ok_or_else(|| {
                    Error::parse(
                        offset as u64,
                        format!("tensor `{}` has no parameter slot", entry.name),
                    )
                })?;
            if expected != entry.shape {
                return Err(Error::parse(
                    offset as u64,
                    format!(
                        "tensor `{}` has shape {:?}, network expects {expected:?}",
                        entry.name, entry.shape
                    ),
                ));
            }
            let t = Tensor::new(entry.shape.clone(), data)
                .map_err(|e| Error::parse(offset as u64, e.to_string()))?;
            match entry.role {
                TensorRole::Param => {
                    params.tensors[entry.param] = t;
                    seen[entry.param] = true;
                }
                TensorRole::Mask => masks[entry.param] = Some(t),
            }
            offset = end;
        }
        if offset != bytes.len() {
            return Err(Error::parse(
                offset as u64,
                "trailing bytes after last tensor",
            ));
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::parse(
                16,
                format!(
                    "parameter `{}` missing from tensor table",
                    params.infos[missing].name
                ),
            ));
        }
        let mask = masks
            .iter()
            .any(Option::is_some)
            .then(|| SparsityMask::from_parts(masks));
        Ok(Self {
            spec: header.spec,
            params,
            mask,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        if let Some(parent) = path.as_ref().parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn save_checkpoint(c: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    c.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
