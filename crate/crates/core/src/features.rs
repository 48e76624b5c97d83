//! Log mel-filterbank (LMFB) features.
//!
//! Periodic Hann window, power spectrum, HTK-scale triangular filters and a
//! floored natural log. No pre-emphasis and no normalization. The extractor
//! is expressed with tensor ops so that gradients reach the input samples.

use std::f64::consts::PI;

use candle_core::{DType, Tensor};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Waveform;
use crate::tensor::{self, DEVICE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmfbConfig {
    pub n_mels: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub fft_size: usize,
    pub log_floor: f64,
    /// `[f_min, f_max]` in Hz; `None` means `[0, sample_rate / 2]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mel_range: Option<[f64; 2]>,
}

impl Default for LmfbConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            win_length: 400,
            hop_length: 200,
            fft_size: 512,
            log_floor: 1e-10,
            mel_range: None,
        }
    }
}

impl LmfbConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("lmfb: {m}")));
        if self.n_mels == 0 {
            return bad("n_mels must be >= 1");
        }
        if self.win_length == 0 || self.win_length > self.fft_size {
            return bad("need 1 <= win_length <= fft_size");
        }
        if self.hop_length == 0 {
            return bad("hop_length must be >= 1");
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return bad("log_floor must be positive");
        }
        if let Some([lo, hi]) = self.mel_range {
            if !(lo >= 0.0 && hi > lo) {
                return bad("mel_range must satisfy 0 <= f_min < f_max");
            }
        }
        Ok(())
    }
}

/// Number of frames taken from `n_samples` without padding.
pub fn frame_count(n_samples: usize, win: usize, hop: usize) -> Result<usize> {
    if n_samples < win {
        return Err(Error::InputTooShort {
            got: n_samples,
            need: win,
        });
    }
    Ok((n_samples - win) / hop.max(1) + 1)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// `n_mels + 2` edge frequencies, evenly spaced on the mel scale.
fn mel_edges(n_mels: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Triangular filterbank as an `[n_bins, n_mels]` matrix.
pub fn mel_filterbank(n_mels: usize, fft_size: usize, sample_rate: u32, f_min: f64, f_max: f64) -> Array2<f64> {
    let n_bins = fft_size / 2 + 1;
    let edges = mel_edges(n_mels, f_min, f_max);
    let mut fb = Array2::zeros((n_bins, n_mels));
    for k in 0..n_bins {
        let f = k as f64 * sample_rate as f64 / fft_size as f64;
        for m in 0..n_mels {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let w = if f >= l && f <= c && c > l {
                (f - l) / (c - l)
            } else if f > c && f <= r && r > c {
                (r - f) / (r - c)
            } else {
                0.0
            };
            fb[[k, m]] = w;
        }
    }
    fb
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Log mel-filterbank matrix, `n_mels × frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    pub frame_rate: f64,
}

impl FeatureMatrix {
    pub fn n_mels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }
}

/// Precomputed analysis matrices for one configuration and sample rate.
#[derive(Debug, Clone)]
pub struct LmfbExtractor {
    cfg: LmfbConfig,
    sample_rate: u32,
    // windowed real/imaginary DFT bases `[win, n_bins]` and filterbank `[n_bins, n_mels]`
    dft_re: Vec<f64>,
    dft_im: Vec<f64>,
    filterbank: Array2<f64>,
}

impl LmfbExtractor {
    pub fn new(cfg: &LmfbConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate()?;
        let nyquist = sample_rate as f64 / 2.0;
        let [f_min, f_max] = cfg.mel_range.unwrap_or([0.0, nyquist]);
        if f_max > nyquist + 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "lmfb: f_max {f_max} Hz exceeds Nyquist {nyquist} Hz"
            )));
        }
        let n_bins = cfg.fft_size / 2 + 1;
        let window = hann(cfg.win_length);
        let mut dft_re = Vec::with_capacity(cfg.win_length * n_bins);
        let mut dft_im = Vec::with_capacity(cfg.win_length * n_bins);
        for (n, w) in window.iter().enumerate() {
            for k in 0..n_bins {
                let phase = 2.0 * PI * (k * n % cfg.fft_size) as f64 / cfg.fft_size as f64;
                dft_re.push(w * phase.cos());
                dft_im.push(-w * phase.sin());
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            sample_rate,
            dft_re,
            dft_im,
            filterbank: mel_filterbank(cfg.n_mels, cfg.fft_size, sample_rate, f_min, f_max),
        })
    }

    pub fn config(&self) -> &LmfbConfig {
        &self.cfg
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn filterbank(&self) -> &Array2<f64> {
        &self.filterbank
    }

    /// Center frequency of each mel band in Hz.
    pub fn band_centers(&self) -> Vec<f64> {
        let nyquist = self.sample_rate as f64 / 2.0;
        let [lo, hi] = self.cfg.mel_range.unwrap_or([0.0, nyquist]);
        let edges = mel_edges(self.cfg.n_mels, lo, hi);
        edges[1..=self.cfg.n_mels].to_vec()
    }

    pub fn frame_count(&self, n_samples: usize) -> Result<usize> {
        frame_count(n_samples, self.cfg.win_length, self.cfg.hop_length)
    }

    /// `[batch, time]` → `[batch, frames, n_mels]`, differentiable.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dtype = x.dtype();
        let n_bins = self.cfg.fft_size / 2 + 1;
        let win = self.cfg.win_length;
        let fr = tensor::frames(x, win, self.cfg.hop_length)?;
        let re_basis = Tensor::from_slice(&self.dft_re, (win, n_bins), &DEVICE)?.to_dtype(dtype)?;
        let im_basis = Tensor::from_slice(&self.dft_im, (win, n_bins), &DEVICE)?.to_dtype(dtype)?;
        let fb = Tensor::from_slice(
            self.filterbank.as_slice().expect("standard layout"),
            self.filterbank.dim(),
            &DEVICE,
        )?
        .to_dtype(dtype)?;
        let re = tensor::batched_linear(&fr, &re_basis)?;
        let im = tensor::batched_linear(&fr, &im_basis)?;
        let power = (re.sqr()? + im.sqr()?)?;
        let mel = tensor::batched_linear(&power, &fb)?;
        Ok(mel.maximum(self.cfg.log_floor)?.log()?)
    }

    pub fn extract(&self, wave: &Waveform) -> Result<FeatureMatrix> {
        if wave.sample_rate() != self.sample_rate {
            return Err(Error::SampleRateMismatch(self.sample_rate, wave.sample_rate()));
        }
        let x = tensor::wave_tensor(wave, DType::F64)?;
        let feats = self.forward(&x)?.squeeze(0)?.t()?.to_vec2::<f64>()?;
        let (rows, cols) = (feats.len(), feats[0].len());
        let values = Array2::from_shape_vec((rows, cols), feats.into_iter().flatten().collect())
            .expect("rectangular");
        Ok(FeatureMatrix {
            values,
            frame_rate: self.sample_rate as f64 / self.cfg.hop_length as f64,
        })
    }
}

/// LMFB of a waveform at its own sample rate.
pub fn lmfb(wave: &Waveform, cfg: &LmfbConfig) -> Result<FeatureMatrix> {
    LmfbExtractor::new(cfg, wave.sample_rate())?.extract(wave)
}
