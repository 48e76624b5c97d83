use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{probe_signal, EncoderAdapter, FrameMlp};
use crate::error::{Error, Result};

/// JSON descriptor naming a serialized encoder and its declared contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterDescriptor {
    pub format: String,
    pub path: PathBuf,
    pub n_layers: usize,
    pub dim: usize,
    pub win: usize,
    pub hop: usize,
    pub differentiable: bool,
}

impl AdapterDescriptor {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut d: AdapterDescriptor = serde_json::from_slice(&bytes)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        if d.path.is_relative() {
            if let Some(dir) = path.parent() {
                d.path = dir.join(&d.path);
            }
        }
        Ok(d)
    }
}

pub const FRAME_MLP_FORMAT: &str = "frame_mlp_json";

/// Probe length used to verify a loaded adapter: one second at 16 kHz.
const PROBE_SAMPLES: usize = 16000;

/// Loads the model named by `descriptor` and checks its declared layer
/// count, width and frame contract on a probe signal.
pub fn load_external_adapter(descriptor: &AdapterDescriptor) -> Result<Box<dyn EncoderAdapter>> {
    let mut model = match descriptor.format.as_str() {
        FRAME_MLP_FORMAT => FrameMlp::load_json(&descriptor.path)?,
        other => return Err(Error::UnsupportedModel(format!("unknown format tag '{other}'"))),
    };
    model.set_differentiable(descriptor.differentiable);
    if model.win() != descriptor.win || model.hop() != descriptor.hop {
        return Err(Error::ContractViolation(format!(
            "declared win/hop {}/{} but model uses {}/{}",
            descriptor.win,
            descriptor.hop,
            model.win(),
            model.hop()
        )));
    }
    let outs = model.encode(&probe_signal(PROBE_SAMPLES))?;
    if outs.len() != descriptor.n_layers {
        return Err(Error::ContractViolation(format!(
            "declared {} layers, probe produced {}",
            descriptor.n_layers,
            outs.len()
        )));
    }
    let frames = model.frame_count(PROBE_SAMPLES)?;
    for t in &outs {
        let (_, f, d) = t.dims3()?;
        if d != descriptor.dim {
            return Err(Error::ContractViolation(format!(
                "declared dim {}, probe produced {d}",
                descriptor.dim
            )));
        }
        if f != frames {
            return Err(Error::ContractViolation(format!(
                "frame contract predicts {frames} frames, probe produced {f}"
            )));
        }
    }
    Ok(Box::new(model))
}
