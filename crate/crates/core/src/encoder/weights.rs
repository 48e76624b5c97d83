use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How per-layer pooling weights are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightScheme {
    /// Zero weight on the first `cut` layers, uniform over the rest.
    /// `cut` defaults to `⌊N/2⌋`.
    LatterHalfUniform {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cut: Option<usize>,
    },
    /// Same shape with the cut index taken literally as `⌊2/N⌋`, which
    /// zeroes nothing for `N ≥ 3`. Kept for comparison runs.
    PrintedFloor,
    Uniform,
    /// 1-based layer selector.
    OneHot { layer: usize },
    /// Nonnegative weights, normalized to sum to one.
    Custom { weights: Vec<f64> },
}

impl Default for WeightScheme {
    fn default() -> Self {
        WeightScheme::LatterHalfUniform { cut: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    weights: Vec<f64>,
    scheme: WeightScheme,
}

impl LayerWeights {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn scheme(&self) -> &WeightScheme {
        &self.scheme
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn tail_uniform(n: usize, cut: usize) -> Vec<f64> {
    let tail = 1.0 / (n - cut) as f64;
    (0..n).map(|i| if i < cut { 0.0 } else { tail }).collect()
}

pub fn make_layer_weights(n: usize, scheme: &WeightScheme) -> Result<LayerWeights> {
    if n == 0 {
        return Err(Error::InvalidScheme("encoder must have at least one layer".into()));
    }
    let weights = match scheme {
        WeightScheme::LatterHalfUniform { cut } => {
            let cut = cut.unwrap_or(n / 2);
            if cut >= n {
                return Err(Error::InvalidScheme(format!(
                    "cut index {cut} leaves no active layer out of {n}"
                )));
            }
            tail_uniform(n, cut)
        }
        WeightScheme::PrintedFloor => {
            let cut = 2 / n;
            if cut >= n {
                return Err(Error::InvalidScheme(format!(
                    "cut index {cut} leaves no active layer out of {n}"
                )));
            }
            tail_uniform(n, cut)
        }
        WeightScheme::Uniform => vec![1.0 / n as f64; n],
        WeightScheme::OneHot { layer } => {
            if *layer == 0 || *layer > n {
                return Err(Error::IndexOutOfRange {
                    index: *layer,
                    n_layers: n,
                });
            }
            (1..=n).map(|i| if i == *layer { 1.0 } else { 0.0 }).collect()
        }
        WeightScheme::Custom { weights } => {
            if weights.len() != n {
                return Err(Error::LengthMismatch(weights.len(), n));
            }
            if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::InvalidScheme("custom weights must be finite and >= 0".into()));
            }
            let total: f64 = weights.iter().sum();
            if total <= 0.0 {
                return Err(Error::InvalidScheme("custom weights are all zero".into()));
            }
            weights.iter().map(|w| w / total).collect()
        }
    };
    Ok(LayerWeights {
        weights,
        scheme: scheme.clone(),
    })
}
