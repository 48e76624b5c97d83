//! Waveforms, WAV I/O, SNR-controlled mixing and dataset simulation.
//!
//! All mixing and metric arithmetic is done in `f64`; tensors are only built
//! from waveforms at the model boundary.

mod manifest;
mod mix;
mod synth;
mod wav;

pub use manifest::{read_manifest, write_manifest, ManifestEntry};
pub use mix::{measure_snr, mix_at_snr, MixtureExample};
pub use synth::{simulate_dataset, synth_noise, synth_speech, DatasetSource, SyntheticSpec};
pub use wav::{read_wav, write_wav, WavEncoding};

use crate::error::{Error, Result};

/// A mono sample sequence. Samples are finite and nominally within [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidWaveform("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidWaveform("waveform has no samples".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidWaveform(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Builds from `f32` samples, e.g. a model output.
    pub fn from_f32(samples: &[f32], sample_rate: u32) -> Result<Self> {
        Self::new(samples.iter().map(|&s| s as f64).collect(), sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        energy(&self.samples)
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Errors unless `other` has the same length and sample rate.
    pub fn check_compatible(&self, other: &Waveform) -> Result<()> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::SampleRateMismatch(self.sample_rate, other.sample_rate));
        }
        if self.len() != other.len() {
            return Err(Error::LengthMismatch(self.len(), other.len()));
        }
        Ok(())
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.samples.iter().map(|&s| s as f32).collect()
    }
}

pub(crate) fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}
