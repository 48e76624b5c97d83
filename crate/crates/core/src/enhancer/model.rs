use std::collections::BTreeMap;

use candle_core::{DType, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ConvTasNetConfig, MaskActivation};
use crate::error::{Error, Result};
use crate::signal::Waveform;
use crate::tensor::{self, batched_linear, DEVICE};

const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Uniform { fan_in: usize },
    Const(f32),
}

fn block_prefix(r: usize, x: usize) -> String {
    format!("blocks.r{r}.x{x:02}")
}

/// Every learnable tensor with its shape and initializer, in creation order.
fn parameter_layout(cfg: &ConvTasNetConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (n, l, b, h, p) = (
        cfg.n_filters,
        cfg.kernel_len,
        cfg.bottleneck,
        cfg.conv_channels,
        cfg.kernel,
    );
    let u = |fan_in| Init::Uniform { fan_in };
    let mut out = vec![
        ("encoder.weight".to_string(), vec![l, n], u(l)),
        ("input_norm.gain".to_string(), vec![n], Init::Const(1.0)),
        ("input_norm.bias".to_string(), vec![n], Init::Const(0.0)),
        ("bottleneck.weight".to_string(), vec![n, b], u(n)),
        ("bottleneck.bias".to_string(), vec![b], u(n)),
    ];
    let n_blocks = cfg.repeats * cfg.blocks_per_repeat;
    for r in 0..cfg.repeats {
        for x in 0..cfg.blocks_per_repeat {
            let pre = block_prefix(r, x);
            let mut push = |name: &str, shape: Vec<usize>, init: Init| {
                out.push((format!("{pre}.{name}"), shape, init));
            };
            push("in.weight", vec![b, h], u(b));
            push("in.bias", vec![h], u(b));
            push("prelu1", vec![1], Init::Const(0.25));
            push("norm1.gain", vec![h], Init::Const(1.0));
            push("norm1.bias", vec![h], Init::Const(0.0));
            push("dw.weight", vec![p, h], u(p));
            push("dw.bias", vec![h], u(p));
            push("prelu2", vec![1], Init::Const(0.25));
            push("norm2.gain", vec![h], Init::Const(1.0));
            push("norm2.bias", vec![h], Init::Const(0.0));
            if r * cfg.blocks_per_repeat + x + 1 < n_blocks {
                push("res.weight", vec![h, b], u(h));
                push("res.bias", vec![b], u(h));
            }
            push("skip.weight", vec![h, b], u(h));
            push("skip.bias", vec![b], u(h));
        }
    }
    out.push(("mask.prelu".to_string(), vec![1], Init::Const(0.25)));
    out.push(("mask.weight".to_string(), vec![b, n], u(b)));
    out.push(("mask.bias".to_string(), vec![n], u(b)));
    out.push(("decoder.weight".to_string(), vec![n, l], u(n)));
    out
}

/// Conv-TasNet with a single sigmoid mask, computed in `f32`.
///
/// The 1-D convolutions are written as framing plus matrix products over
/// `[batch, frames, channels]` tensors; the transposed-convolution decoder
/// is a matrix product followed by half-overlap-add.
#[derive(Debug)]
pub struct EnhancerModel {
    config: ConvTasNetConfig,
    params: BTreeMap<String, Var>,
    mode: Mode,
}

impl EnhancerModel {
    pub fn init(config: &ConvTasNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for (name, shape, init) in parameter_layout(config) {
            let numel: usize = shape.iter().product();
            let data: Vec<f32> = match init {
                Init::Const(c) => vec![c; numel],
                Init::Uniform { fan_in } => {
                    let bound = 1.0 / (fan_in as f32).sqrt();
                    (0..numel).map(|_| rng.random_range(-bound..bound)).collect()
                }
            };
            let var = Var::from_tensor(&Tensor::from_vec(data, shape, &DEVICE)?)?;
            params.insert(name, var);
        }
        Ok(Self {
            config: config.clone(),
            params,
            mode: Mode::Train,
        })
    }

    /// Rebuilds a model from named `f32` buffers, checking names and shapes.
    pub fn from_tensors(config: &ConvTasNetConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = parameter_layout(config);
        if layout.len() != tensors.len() {
            return Err(Error::CheckpointFormat(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                tensors.len()
            )));
        }
        let mut params = BTreeMap::new();
        for (name, shape, _) in layout {
            let t = tensors
                .get(&name)
                .ok_or_else(|| Error::CheckpointFormat(format!("missing parameter {name}")))?;
            if t.dims() != shape.as_slice() {
                return Err(Error::CheckpointFormat(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.dims()
                )));
            }
            params.insert(name, Var::from_tensor(&t.to_dtype(DType::F32)?)?);
        }
        Ok(Self {
            config: config.clone(),
            params,
            mode: Mode::Eval,
        })
    }

    pub fn config(&self) -> &ConvTasNetConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    pub fn parameter_checksum(&self) -> Result<String> {
        let buffers = self
            .params
            .iter()
            .map(|(k, v)| Ok((k.clone(), tensor::tensor_values(v.as_tensor())?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(tensor::checksum(buffers))
    }

    fn p(&self, name: &str) -> &Tensor {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} is part of the layout"))
            .as_tensor()
    }

    fn global_norm(&self, x: &Tensor, prefix: &str) -> Result<Tensor> {
        let mean = x.mean_keepdim(2)?.mean_keepdim(1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(2)?.mean_keepdim(1)?;
        let normed = centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(self.p(&format!("{prefix}.gain")))?
            .broadcast_add(self.p(&format!("{prefix}.bias")))?)
    }

    fn prelu(x: &Tensor, slope: &Tensor) -> Result<Tensor> {
        Ok((x.relu()? - x.neg()?.relu()?.broadcast_mul(slope)?)?)
    }

    fn linear(&self, x: &Tensor, prefix: &str) -> Result<Tensor> {
        let y = batched_linear(x, self.p(&format!("{prefix}.weight")))?;
        Ok(y.broadcast_add(self.p(&format!("{prefix}.bias")))?)
    }

    /// Non-causal depthwise convolution along the frame axis.
    fn depthwise(&self, x: &Tensor, prefix: &str, dilation: usize) -> Result<Tensor> {
        let frames = x.dim(1)?;
        let k = self.config.kernel;
        let pad = dilation * (k - 1) / 2;
        let xp = x.pad_with_zeros(1, pad, pad)?;
        let w = self.p(&format!("{prefix}.weight"));
        let mut acc = xp.narrow(1, 0, frames)?.broadcast_mul(&w.get(0)?)?;
        for tap in 1..k {
            acc = (acc + xp.narrow(1, tap * dilation, frames)?.broadcast_mul(&w.get(tap)?)?)?;
        }
        Ok(acc.broadcast_add(self.p(&format!("{prefix}.bias")))?)
    }

    fn separator(&self, w: &Tensor) -> Result<Tensor> {
        let mut x = self.linear(&self.global_norm(w, "input_norm")?, "bottleneck")?;
        let mut skip_sum: Option<Tensor> = None;
        for r in 0..self.config.repeats {
            for b in 0..self.config.blocks_per_repeat {
                let pre = block_prefix(r, b);
                let h = self.linear(&x, &format!("{pre}.in"))?;
                let h = Self::prelu(&h, self.p(&format!("{pre}.prelu1")))?;
                let h = self.global_norm(&h, &format!("{pre}.norm1"))?;
                let h = self.depthwise(&h, &format!("{pre}.dw"), 1 << b)?;
                let h = Self::prelu(&h, self.p(&format!("{pre}.prelu2")))?;
                let h = self.global_norm(&h, &format!("{pre}.norm2"))?;
                let skip = self.linear(&h, &format!("{pre}.skip"))?;
                skip_sum = Some(match skip_sum {
                    None => skip,
                    Some(s) => (s + skip)?,
                });
                if self.params.contains_key(&format!("{pre}.res.weight")) {
                    x = (x + self.linear(&h, &format!("{pre}.res"))?)?;
                }
            }
        }
        let s = Self::prelu(&skip_sum.expect("at least one block"), self.p("mask.prelu"))?;
        let logits = self.linear(&s, "mask")?;
        match self.config.mask {
            MaskActivation::Sigmoid => tensor::sigmoid(&logits),
            MaskActivation::Relu => Ok(logits.relu()?),
        }
    }

    /// `[batch, time]` noisy → `[batch, time]` enhanced, differentiable with
    /// respect to the parameters and the input.
    pub fn forward(&self, y: &Tensor) -> Result<Tensor> {
        let y = y.to_dtype(DType::F32)?;
        let (batch, len) = y.dims2()?;
        let l = self.config.kernel_len;
        if len < l {
            return Err(Error::InputTooShort { got: len, need: l });
        }
        let s = self.config.stride();
        let n_chunks = len.div_ceil(s);
        let chunks = y
            .pad_with_zeros(1, 0, n_chunks * s - len)?
            .reshape((batch, n_chunks, s))?;
        let n_frames = n_chunks - 1;
        let frames = Tensor::cat(
            &[chunks.narrow(1, 0, n_frames)?, chunks.narrow(1, 1, n_frames)?],
            2,
        )?;
        let w = batched_linear(&frames, self.p("encoder.weight"))?.relu()?;
        let mask = self.separator(&w)?;
        let decoded = batched_linear(&(w * mask)?, self.p("decoder.weight"))?;
        let head = decoded.narrow(2, 0, s)?.pad_with_zeros(1, 0, 1)?;
        let tail = decoded.narrow(2, s, s)?.pad_with_zeros(1, 1, 0)?;
        Ok((head + tail)?.reshape((batch, n_chunks * s))?.narrow(1, 0, len)?)
    }

    /// Enhances equal-length waveforms in one batch.
    pub fn enhance_batch(&self, ys: &[&Waveform]) -> Result<Vec<Waveform>> {
        let x = tensor::batch_tensor(ys, DType::F32)?;
        let out = self.forward(&x)?.detach().to_vec2::<f32>()?;
        out.iter()
            .zip(ys)
            .map(|(o, y)| Waveform::from_f32(o, y.sample_rate()))
            .collect()
    }

    pub fn enhance(&self, y: &Waveform) -> Result<Waveform> {
        Ok(self.enhance_batch(&[y])?.remove(0))
    }
}
