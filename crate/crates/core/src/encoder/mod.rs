//! Multi-layer frozen encoders and layer pooling.
//!
//! An [`EncoderAdapter`] maps a batch of waveforms to `N` layer outputs of
//! shape `[batch, frames, dim]`. The adapter never updates its parameters;
//! callers only differentiate through its outputs with respect to the input.
//!
//! Layer numbers are 1-based in user-facing schemes (`one_hot { layer: 4 }`
//! selects the last of four layers) and 0-based in storage.

mod external;
mod mlp;
mod weights;

use std::sync::Arc;

use candle_core::{DType, Tensor};
use ndarray::Array2;

pub use external::{load_external_adapter, AdapterDescriptor};
pub use mlp::{toy_encoder, FrameMlp, ToyEncoderConfig};
pub use weights::{make_layer_weights, LayerWeights, WeightScheme};

use crate::error::{Error, Result};
use crate::signal::Waveform;
use crate::tensor::{self, DEVICE};

pub trait EncoderAdapter: Send + Sync + std::fmt::Debug {
    fn n_layers(&self) -> usize;

    fn dim(&self) -> usize;

    /// Frames produced for `n_samples` input samples.
    fn frame_count(&self, n_samples: usize) -> Result<usize>;

    /// Whether gradients flow from the outputs back to the input samples.
    fn differentiable(&self) -> bool;

    /// `[batch, time]` → `n_layers` tensors of `[batch, frames, dim]`.
    fn encode(&self, x: &Tensor) -> Result<Vec<Tensor>>;

    fn parameter_checksum(&self) -> String;
}

pub type SharedEncoder = Arc<dyn EncoderAdapter>;

/// Layer outputs `F_1..F_N`, each `dim × frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    layers: Vec<Array2<f64>>,
}

impl FeatureSeries {
    pub fn new(layers: Vec<Array2<f64>>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::InvalidConfig("feature series needs at least one layer".into()));
        };
        let shape = first.dim();
        for l in &layers {
            if l.dim() != shape {
                return Err(Error::ContractViolation(format!(
                    "layer shape {:?} differs from {:?}",
                    l.dim(),
                    shape
                )));
            }
            if l.iter().any(|v| !v.is_finite()) {
                return Err(Error::ContractViolation("non-finite feature".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Array2<f64>] {
        &self.layers
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn dim(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.layers[0].ncols()
    }

    /// Layerwise `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &FeatureSeries, b: f64) -> Result<Self> {
        if self.n_layers() != other.n_layers() {
            return Err(Error::LengthMismatch(self.n_layers(), other.n_layers()));
        }
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(x, y)| x * a + y * b)
            .collect();
        Self::new(layers)
    }
}

/// Runs the adapter on one waveform.
pub fn encode_layers(adapter: &dyn EncoderAdapter, wave: &Waveform) -> Result<FeatureSeries> {
    adapter.frame_count(wave.len())?;
    let x = tensor::wave_tensor(wave, DType::F64)?;
    let outs = adapter.encode(&x)?;
    let layers = outs
        .iter()
        .map(|t| {
            let m = t.squeeze(0)?.t()?.contiguous()?;
            let (d, f) = m.dims2()?;
            let v = m.flatten_all()?.to_vec1::<f64>()?;
            Ok(Array2::from_shape_vec((d, f), v).expect("contiguous"))
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureSeries::new(layers)
}

/// `Σ_n w_n F_n`; layers with zero weight are skipped.
pub fn weighted_sum(fs: &FeatureSeries, w: &LayerWeights) -> Result<Array2<f64>> {
    if w.len() != fs.n_layers() {
        return Err(Error::LengthMismatch(w.len(), fs.n_layers()));
    }
    let mut acc: Option<Array2<f64>> = None;
    for (layer, &wn) in fs.layers.iter().zip(w.weights()) {
        if wn == 0.0 {
            continue;
        }
        let term = if wn == 1.0 { layer.clone() } else { layer * wn };
        acc = Some(match acc {
            None => term,
            Some(a) => a + term,
        });
    }
    Ok(acc.expect("weights sum to one, so at least one is nonzero"))
}

/// Tensor counterpart of [`weighted_sum`] over `[batch, frames, dim]` layers.
pub fn weighted_sum_tensor(layers: &[Tensor], w: &LayerWeights) -> Result<Tensor> {
    if w.len() != layers.len() {
        return Err(Error::LengthMismatch(w.len(), layers.len()));
    }
    let mut acc: Option<Tensor> = None;
    for (layer, &wn) in layers.iter().zip(w.weights()) {
        if wn == 0.0 {
            continue;
        }
        let term = if wn == 1.0 { layer.clone() } else { (layer * wn)? };
        acc = Some(match acc {
            None => term,
            Some(a) => (a + term)?,
        });
    }
    Ok(acc.expect("weights sum to one, so at least one is nonzero"))
}

pub(crate) fn probe_signal(n_samples: usize) -> Tensor {
    let v: Vec<f64> = (0..n_samples)
        .map(|i| 0.1 * ((i as f64) * 0.013).sin() + 0.05 * ((i as f64) * 0.171).cos())
        .collect();
    Tensor::from_vec(v, (1, n_samples), &DEVICE).expect("probe tensor")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn series() -> FeatureSeries {
        FeatureSeries::new(vec![
            array![[1.0, 2.0], [3.0, 4.0]],
            array![[0.5, -1.0], [0.0, 2.0]],
            array![[-2.0, 0.25], [1.5, 1.0]],
        ])
        .unwrap()
    }

    #[test]
    fn one_hot_selects_layer_exactly() {
        let fs = series();
        for k in 1..=3 {
            let w = make_layer_weights(3, &WeightScheme::OneHot { layer: k }).unwrap();
            assert_eq!(weighted_sum(&fs, &w).unwrap(), fs.layers()[k - 1]);
        }
    }

    #[test]
    fn uniform_is_mean() {
        let fs = series();
        let w = make_layer_weights(3, &WeightScheme::Uniform).unwrap();
        let ws = weighted_sum(&fs, &w).unwrap();
        let mean = (&fs.layers()[0] + &fs.layers()[1] + &fs.layers()[2]) / 3.0;
        for (a, b) in ws.iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let w = make_layer_weights(4, &WeightScheme::Uniform).unwrap();
        assert!(matches!(weighted_sum(&series(), &w), Err(Error::LengthMismatch(4, 3))));
    }

    #[test]
    fn weighted_sum_is_linear() {
        let f = series();
        let g = FeatureSeries::new(f.layers().iter().map(|l| l.mapv(|v| v * v - 1.0)).collect()).unwrap();
        let w = make_layer_weights(3, &WeightScheme::Custom { weights: vec![0.2, 0.5, 0.3] }).unwrap();
        let (a, b) = (1.7, -0.4);
        let lhs = weighted_sum(&f.combine(a, &g, b).unwrap(), &w).unwrap();
        let rhs = weighted_sum(&f, &w).unwrap() * a + weighted_sum(&g, &w).unwrap() * b;
        for (x, y) in lhs.iter().zip(rhs.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn ragged_series_rejected() {
        let r = FeatureSeries::new(vec![array![[1.0, 2.0]], array![[1.0], [2.0]]]);
        assert!(r.is_err());
    }
}
