//! Single-file checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then little-endian `f32` blobs in header order. The header holds
//! the enhancer configuration, training and schedule state, blob directory
//! and a SHA-256 of the blob payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::{Adam, AdamConfig};
use super::schedule::ScheduleState;
use super::Stage;
use crate::enhancer::{ConvTasNetConfig, EnhancerModel};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::tensor::{self, DEVICE};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSLSECKP";
pub const FORMAT_VERSION: u32 = 1;

/// Loop position saved with every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub stage: Stage,
    pub loss: LossKind,
    pub alpha: f64,
    pub seed: u64,
    /// Last completed epoch; 0 before any update.
    pub epoch: usize,
    pub schedule: ScheduleState,
    /// Best dev total seen so far, including epoch 0.
    pub best_dev_loss: Option<f64>,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Blob {
    fn from_tensor(t: &Tensor) -> Result<Self> {
        Ok(Self {
            shape: t.dims().to_vec(),
            data: t.flatten_all()?.to_dtype(candle_core::DType::F32)?.to_vec1::<f32>()?,
        })
    }

    fn to_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::from_slice(&self.data, self.shape.as_slice(), &DEVICE)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: BTreeMap<String, Blob>,
    pub v: BTreeMap<String, Blob>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub enhancer: ConvTasNetConfig,
    pub params: BTreeMap<String, Blob>,
    pub optimizer: Option<OptimizerState>,
    pub state: TrainState,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlobEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerHeader {
    config: AdamConfig,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    enhancer: ConvTasNetConfig,
    state: TrainState,
    optimizer: Option<OptimizerHeader>,
    blobs: Vec<BlobEntry>,
    payload_sha256: String,
}

const PARAM: &str = "param/";
const MOMENT1: &str = "adam.m/";
const MOMENT2: &str = "adam.v/";

fn bad(msg: impl Into<String>) -> Error {
    Error::CheckpointFormat(msg.into())
}

impl Checkpoint {
    pub fn from_model(model: &EnhancerModel, optimizer: Option<&Adam>, adam_cfg: AdamConfig, state: TrainState) -> Result<Self> {
        let params = model
            .params()
            .iter()
            .map(|(k, v)| Ok((k.clone(), Blob::from_tensor(v.as_tensor())?)))
            .collect::<Result<_>>()?;
        let optimizer = match optimizer {
            None => None,
            Some(opt) => {
                let (m, v) = opt.moments();
                let conv = |map: &BTreeMap<String, Tensor>| -> Result<BTreeMap<String, Blob>> {
                    map.iter().map(|(k, t)| Ok((k.clone(), Blob::from_tensor(t)?))).collect()
                };
                Some(OptimizerState {
                    config: adam_cfg,
                    step: opt.step_count(),
                    m: conv(m)?,
                    v: conv(v)?,
                })
            }
        };
        Ok(Self {
            enhancer: model.config().clone(),
            params,
            optimizer,
            state,
        })
    }

    pub fn to_model(&self) -> Result<EnhancerModel> {
        let tensors = self
            .params
            .iter()
            .map(|(k, b)| Ok((k.clone(), b.to_tensor()?)))
            .collect::<Result<_>>()?;
        EnhancerModel::from_tensors(&self.enhancer, tensors)
    }

    /// Restores the optimizer, or a fresh one when none was saved.
    pub fn to_adam(&self, cfg: AdamConfig) -> Result<Adam> {
        let Some(opt) = &self.optimizer else {
            return Ok(Adam::new(cfg));
        };
        let conv = |map: &BTreeMap<String, Blob>| -> Result<BTreeMap<String, Tensor>> {
            map.iter().map(|(k, b)| Ok((k.clone(), b.to_tensor()?))).collect()
        };
        Ok(Adam::from_moments(opt.config, opt.step, conv(&opt.m)?, conv(&opt.v)?))
    }

    /// Same digest as [`EnhancerModel::parameter_checksum`].
    pub fn parameter_checksum(&self) -> String {
        tensor::checksum(
            self.params
                .iter()
                .map(|(k, b)| (k.clone(), b.data.iter().map(|&x| x as f64).collect())),
        )
    }

    fn named_blobs(&self) -> Vec<(String, &Blob)> {
        let mut out: Vec<(String, &Blob)> = self.params.iter().map(|(k, b)| (format!("{PARAM}{k}"), b)).collect();
        if let Some(opt) = &self.optimizer {
            out.extend(opt.m.iter().map(|(k, b)| (format!("{MOMENT1}{k}"), b)));
            out.extend(opt.v.iter().map(|(k, b)| (format!("{MOMENT2}{k}"), b)));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut blobs = Vec::new();
        for (name, blob) in self.named_blobs() {
            blobs.push(BlobEntry {
                name,
                shape: blob.shape.clone(),
                offset: (payload.len() / 4) as u64,
                len: blob.data.len() as u64,
            });
            for v in &blob.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            enhancer: self.enhancer.clone(),
            state: self.state.clone(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                config: o.config,
                step: o.step,
            }),
            blobs,
            payload_sha256: hex_digest(&payload),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + header.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[20..header_end]).map_err(|e| bad(format!("header: {e}")))?;
        let payload = &bytes[header_end..];
        if hex_digest(payload) != header.payload_sha256 {
            return Err(bad("payload checksum mismatch"));
        }
        let mut params = BTreeMap::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        let mut expected_offset = 0u64;
        for entry in header.blobs {
            let numel: usize = entry.shape.iter().product();
            if entry.len as usize != numel || entry.offset != expected_offset {
                return Err(bad(format!("blob {} has an inconsistent directory entry", entry.name)));
            }
            let start = entry.offset as usize * 4;
            let end = start + numel * 4;
            if end > payload.len() {
                return Err(bad(format!("blob {} runs past the end of the file", entry.name)));
            }
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            expected_offset += entry.len;
            let blob = Blob { shape: entry.shape, data };
            let target = if let Some(k) = entry.name.strip_prefix(PARAM) {
                params.insert(k.to_string(), blob)
            } else if let Some(k) = entry.name.strip_prefix(MOMENT1) {
                m.insert(k.to_string(), blob)
            } else if let Some(k) = entry.name.strip_prefix(MOMENT2) {
                v.insert(k.to_string(), blob)
            } else {
                return Err(bad(format!("unknown blob {}", entry.name)));
            };
            if target.is_some() {
                return Err(bad(format!("duplicate blob {}", entry.name)));
            }
        }
        if expected_offset as usize * 4 != payload.len() {
            return Err(bad("trailing bytes after the last blob"));
        }
        let optimizer = match header.optimizer {
            Some(o) => Some(OptimizerState {
                config: o.config,
                step: o.step,
                m,
                v,
            }),
            None if m.is_empty() && v.is_empty() => None,
            None => return Err(bad("optimizer moments without optimizer header")),
        };
        let ckpt = Self {
            enhancer: header.enhancer,
            params,
            optimizer,
            state: header.state,
        };
        // validates names and shapes against the enhancer layout
        ckpt.to_model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
