use std::fs;
use std::path::Path;

use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EncoderAdapter;
use crate::error::{Error, Result};
use crate::features::{frame_count, hann};
use crate::tensor::{self, DEVICE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `[in_dim, out_dim]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Serialized form of a [`FrameMlp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameMlpFile {
    win: usize,
    hop: usize,
    hann_window: bool,
    layers: Vec<DenseLayer>,
}

#[derive(Debug)]
struct LayerTensors {
    weight: Tensor,
    bias: Tensor,
}

/// Frame-wise stack of `tanh` affine layers: layer 1 reads the windowed
/// frame, every later layer reads its predecessor.
#[derive(Debug)]
pub struct FrameMlp {
    win: usize,
    hop: usize,
    window: Option<Vec<f64>>,
    layers: Vec<DenseLayer>,
    differentiable: bool,
    f64_cache: Vec<LayerTensors>,
    f32_cache: Vec<LayerTensors>,
}

impl FrameMlp {
    pub fn new(win: usize, hop: usize, hann_window: bool, layers: Vec<DenseLayer>) -> Result<Self> {
        if win == 0 || hop == 0 {
            return Err(Error::InvalidConfig("encoder win and hop must be positive".into()));
        }
        if layers.is_empty() {
            return Err(Error::InvalidConfig("encoder needs at least one layer".into()));
        }
        let mut expected_in = win;
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim != expected_in
                || l.weight.len() != l.in_dim * l.out_dim
                || l.bias.len() != l.out_dim
            {
                return Err(Error::ContractViolation(format!("layer {} has inconsistent shapes", i + 1)));
            }
            if l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::ContractViolation(format!("layer {} has non-finite weights", i + 1)));
            }
            expected_in = l.out_dim;
        }
        if layers.iter().any(|l| l.out_dim != layers[0].out_dim) {
            return Err(Error::ContractViolation("all layers must share one output dim".into()));
        }
        let build = |dtype: DType| -> Result<Vec<LayerTensors>> {
            layers
                .iter()
                .map(|l| {
                    Ok(LayerTensors {
                        weight: Tensor::from_slice(&l.weight, (l.in_dim, l.out_dim), &DEVICE)?.to_dtype(dtype)?,
                        bias: Tensor::from_slice(&l.bias, l.out_dim, &DEVICE)?.to_dtype(dtype)?,
                    })
                })
                .collect()
        };
        Ok(Self {
            win,
            hop,
            window: hann_window.then(|| hann(win)),
            f64_cache: build(DType::F64)?,
            f32_cache: build(DType::F32)?,
            layers,
            differentiable: true,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn win(&self) -> usize {
        self.win
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window(&self) -> Option<&[f64]> {
        self.window.as_deref()
    }

    pub(crate) fn set_differentiable(&mut self, flag: bool) {
        self.differentiable = flag;
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = FrameMlpFile {
            win: self.win,
            hop: self.hop,
            hann_window: self.window.is_some(),
            layers: self.layers.clone(),
        };
        fs::write(path, serde_json::to_vec(&file)?).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: FrameMlpFile = serde_json::from_slice(&bytes)
            .map_err(|e| Error::UnsupportedModel(format!("{}: {e}", path.display())))?;
        Self::new(file.win, file.hop, file.hann_window, file.layers)
    }
}

impl EncoderAdapter for FrameMlp {
    fn n_layers(&self) -> usize {
        self.layers.len()
    }

    fn dim(&self) -> usize {
        self.layers[0].out_dim
    }

    fn frame_count(&self, n_samples: usize) -> Result<usize> {
        frame_count(n_samples, self.win, self.hop)
    }

    fn differentiable(&self) -> bool {
        self.differentiable
    }

    fn encode(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let dtype = x.dtype();
        let cache = match dtype {
            DType::F64 => &self.f64_cache,
            DType::F32 => &self.f32_cache,
            other => return Err(Error::InvalidConfig(format!("unsupported dtype {other:?}"))),
        };
        let x = if self.differentiable { x.clone() } else { x.detach() };
        let mut h = tensor::frames(&x, self.win, self.hop)?;
        if let Some(w) = &self.window {
            let w = Tensor::from_slice(w, (1, 1, self.win), &DEVICE)?.to_dtype(dtype)?;
            h = h.broadcast_mul(&w)?;
        }
        let mut outs = Vec::with_capacity(cache.len());
        for layer in cache {
            h = tensor::batched_linear(&h, &layer.weight)?
                .broadcast_add(&layer.bias)?
                .tanh()?;
            outs.push(h.clone());
        }
        Ok(outs)
    }

    fn parameter_checksum(&self) -> String {
        tensor::checksum(self.layers.iter().enumerate().flat_map(|(i, l)| {
            [
                (format!("layer{i}.weight"), l.weight.clone()),
                (format!("layer{i}.bias"), l.bias.clone()),
            ]
        }))
    }
}

/// Settings for the desk-scale stand-in encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyEncoderConfig {
    pub seed: u64,
    pub n_layers: usize,
    pub dim: usize,
    pub win: usize,
    pub hop: usize,
    /// Scale of the first layer's weights relative to `1/sqrt(win)`.
    pub input_gain: f64,
}

impl Default for ToyEncoderConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_layers: 4,
            dim: 32,
            win: 400,
            hop: 320,
            input_gain: 8.0,
        }
    }
}

/// Seeded, frozen [`FrameMlp`] with Hann-windowed frames.
pub fn toy_encoder(cfg: &ToyEncoderConfig) -> Result<FrameMlp> {
    if cfg.n_layers == 0 || cfg.dim == 0 {
        return Err(Error::InvalidConfig("toy encoder needs n_layers and dim >= 1".into()));
    }
    if !(cfg.input_gain.is_finite() && cfg.input_gain > 0.0) {
        return Err(Error::InvalidConfig("toy encoder input_gain must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bias_dist = Normal::new(0.0, 0.1).expect("valid");
    let mut layers = Vec::with_capacity(cfg.n_layers);
    let mut in_dim = cfg.win;
    for l in 0..cfg.n_layers {
        let gain = if l == 0 { cfg.input_gain } else { 1.5 };
        let dist = Normal::new(0.0, gain / (in_dim as f64).sqrt()).expect("valid");
        let weight = (0..in_dim * cfg.dim).map(|_| dist.sample(&mut rng)).collect();
        let bias = (0..cfg.dim).map(|_| bias_dist.sample(&mut rng)).collect();
        layers.push(DenseLayer {
            in_dim,
            out_dim: cfg.dim,
            weight,
            bias,
        });
        in_dim = cfg.dim;
    }
    FrameMlp::new(cfg.win, cfg.hop, true, layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::encode_layers;
    use crate::signal::Waveform;

    fn noise_wave(n: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 0.3).unwrap();
        Waveform::new((0..n).map(|_| d.sample(&mut rng)).collect(), 16000).unwrap()
    }

    #[test]
    fn toy_frame_contract() {
        let enc = toy_encoder(&ToyEncoderConfig::default()).unwrap();
        let fs = encode_layers(&enc, &noise_wave(720, 1)).unwrap();
        assert_eq!(fs.n_layers(), 4);
        assert_eq!((fs.dim(), fs.n_frames()), (32, 2));
        assert!(matches!(
            encode_layers(&enc, &noise_wave(399, 1)),
            Err(Error::InputTooShort { .. })
        ));
    }

    #[test]
    fn deterministic_bounded_and_frozen() {
        let enc = toy_encoder(&ToyEncoderConfig::default()).unwrap();
        let again = toy_encoder(&ToyEncoderConfig::default()).unwrap();
        let before = enc.parameter_checksum();
        assert_eq!(before, again.parameter_checksum());
        let w = noise_wave(4000, 2);
        let a = encode_layers(&enc, &w).unwrap();
        let b = encode_layers(&again, &w).unwrap();
        assert_eq!(a, b);
        assert!(a.layers().iter().all(|l| l.iter().all(|v| v.abs() < 1.0)));
        assert_eq!(enc.parameter_checksum(), before);
        let other = toy_encoder(&ToyEncoderConfig { seed: 9, ..Default::default() }).unwrap();
        assert_ne!(other.parameter_checksum(), before);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let enc = toy_encoder(&ToyEncoderConfig { dim: 8, win: 40, hop: 20, ..Default::default() }).unwrap();
        let p = dir.path().join("enc.json");
        enc.save_json(&p).unwrap();
        let back = FrameMlp::load_json(&p).unwrap();
        assert_eq!(back.parameter_checksum(), enc.parameter_checksum());
    }
}
