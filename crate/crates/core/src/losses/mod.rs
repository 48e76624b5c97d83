//! Training criteria and their multitask combinations.
//!
//! Every criterion is evaluated per utterance on `[batch, time]` tensors and
//! reduced over the batch by the arithmetic mean. Component values are kept
//! separately so logs can report them; [`LossValue`] recombines them in `f64`.

mod ctc;
mod recognizer;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Tensor};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use ctc::{ctc_forward_backward, greedy_collapse, CtcOutput};
pub use recognizer::{
    pseudo_transcript, toy_recognizer, RecognizerAdapter, SharedRecognizer, ToyRecognizer, ToyRecognizerConfig,
};

use crate::encoder::{weighted_sum, weighted_sum_tensor, FeatureSeries, LayerWeights, SharedEncoder};
use crate::error::{Error, Result};
use crate::features::{LmfbConfig, LmfbExtractor};
use crate::signal::Waveform;
use crate::tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Snr,
    LmfbMt,
    AsrMt,
    #[default]
    SslMt,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Snr, LossKind::LmfbMt, LossKind::AsrMt, LossKind::SslMt];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Snr => "snr",
            LossKind::LmfbMt => "lmfb_mt",
            LossKind::AsrMt => "asr_mt",
            LossKind::SslMt => "ssl_mt",
        }
    }

    /// The non-SNR term, if any.
    pub fn primary(self) -> Option<&'static str> {
        match self {
            LossKind::Snr => None,
            LossKind::LmfbMt => Some("lmfb"),
            LossKind::AsrMt => Some("asr"),
            LossKind::SslMt => Some("ssl_mse"),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown loss kind `{s}`")))
    }
}

/// Which energy goes in the numerator of the SNR loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SnrNumerator {
    /// `‖x̂‖²`, the estimate.
    #[default]
    Estimate,
    /// `‖x‖²`, the reference.
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultitaskConfig {
    /// Weight of the SNR term.
    pub alpha: f64,
    /// CTC share of the ASR loss.
    pub lambda: f64,
    /// Denominator guard of the SNR loss.
    pub epsilon: f64,
    pub snr_numerator: SnrNumerator,
}

impl Default for MultitaskConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            lambda: 0.3,
            epsilon: 1e-8,
            snr_numerator: SnrNumerator::Estimate,
        }
    }
}

impl MultitaskConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidConfig(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// A scalar loss with its named components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub components: BTreeMap<String, f64>,
}

impl LossValue {
    /// Rebuilds the total of `kind` from its components. For `asr_mt` the
    /// `asr` entry is recomputed from `ctc` and `att`.
    pub fn combine(kind: LossKind, mt: &MultitaskConfig, mut components: BTreeMap<String, f64>) -> Result<Self> {
        let get = |c: &BTreeMap<String, f64>, name: &str| {
            c.get(name)
                .copied()
                .ok_or_else(|| Error::ContractViolation(format!("missing loss component `{name}`")))
        };
        let snr = get(&components, "snr")?;
        let total = match kind {
            LossKind::Snr => snr,
            LossKind::AsrMt => {
                let asr = mt.lambda * get(&components, "ctc")? + (1.0 - mt.lambda) * get(&components, "att")?;
                components.insert("asr".into(), asr);
                asr + mt.alpha * snr
            }
            LossKind::LmfbMt | LossKind::SslMt => {
                get(&components, kind.primary().expect("multitask"))? + mt.alpha * snr
            }
        };
        Ok(Self { total, components })
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.get(name).copied()
    }
}

/// Per-utterance SNR loss `[batch]`.
pub fn snr_loss_tensor(est: &Tensor, reference: &Tensor, epsilon: f64, numerator: SnrNumerator) -> Result<Tensor> {
    if est.dims() != reference.dims() {
        let (a, b) = (est.dims().last().copied().unwrap_or(0), reference.dims().last().copied().unwrap_or(0));
        return Err(Error::LengthMismatch(a, b));
    }
    let ref_energy = reference.sqr()?.sum(1)?;
    if tensor::tensor_values(&ref_energy)?.iter().any(|&e| e == 0.0) {
        return Err(Error::ZeroEnergySignal("reference"));
    }
    let num = match numerator {
        SnrNumerator::Estimate => {
            let e = est.sqr()?.sum(1)?;
            if let Some(&low) = tensor::tensor_values(&e)?.iter().find(|&&v| v < epsilon) {
                return Err(Error::ZeroEnergyEstimate(low));
            }
            e
        }
        SnrNumerator::Reference => ref_energy,
    };
    let den = ((reference - est)?.sqr()?.sum(1)? + epsilon)?;
    Ok(((den.log()? - num.log()?)? * (10.0 / std::f64::consts::LN_10))?)
}

/// Per-utterance `‖LMFB(x̂) − LMFB(x)‖²_F / M` `[batch]`.
pub fn lmfb_distance_tensor(extractor: &LmfbExtractor, est: &Tensor, reference: &Tensor) -> Result<Tensor> {
    let fe = extractor.forward(est)?;
    let fc = extractor.forward(&reference.detach())?.detach();
    Ok((fe - fc)?.sqr()?.mean((1, 2))?)
}

/// Per-utterance SSL-MSE `[batch]`: weighted layer sums first, then one MSE.
pub fn ssl_mse_tensor(encoder: &SharedEncoder, weights: &LayerWeights, est: &Tensor, reference: &Tensor) -> Result<Tensor> {
    let fe = weighted_sum_tensor(&encoder.encode(est)?, weights)?;
    let fc = weighted_sum_tensor(&encoder.encode(&reference.detach())?, weights)?.detach();
    if fe.dims() != fc.dims() {
        return Err(Error::LengthMismatch(fe.dim(1)?, fc.dim(1)?));
    }
    Ok((fe - fc)?.sqr()?.mean((1, 2))?)
}

/// `‖A − B‖²_F / M` over two feature matrices of equal shape.
pub fn lmfb_distance(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::LengthMismatch(a.ncols(), b.ncols()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// SSL-MSE between two precomputed layer series.
pub fn ssl_mse_from_features(enhanced: &FeatureSeries, clean: &FeatureSeries, weights: &LayerWeights) -> Result<f64> {
    let a = weighted_sum(enhanced, weights)?;
    let b = weighted_sum(clean, weights)?;
    if a.dim() != b.dim() {
        return Err(Error::LengthMismatch(a.ncols(), b.ncols()));
    }
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// Graph output of a criterion on one batch.
#[derive(Debug)]
pub struct LossTerms {
    /// Differentiable batch-mean total.
    pub total: Tensor,
    /// Per-utterance component values.
    pub components: BTreeMap<String, Vec<f64>>,
}

impl LossTerms {
    pub fn batch_size(&self) -> usize {
        self.components.values().next().map_or(0, Vec::len)
    }

    pub fn means(&self) -> BTreeMap<String, f64> {
        self.components
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().sum::<f64>() / v.len() as f64))
            .collect()
    }
}

/// A configured criterion with its frozen auxiliary models.
#[derive(Debug, Clone)]
pub struct Criterion {
    kind: LossKind,
    mt: MultitaskConfig,
    lmfb: Option<LmfbExtractor>,
    ssl: Option<(SharedEncoder, LayerWeights)>,
    recognizer: Option<SharedRecognizer>,
}

impl Criterion {
    pub fn snr(mt: MultitaskConfig) -> Result<Self> {
        Self::build(LossKind::Snr, mt, None, None, None)
    }

    pub fn lmfb_mt(extractor: LmfbExtractor, mt: MultitaskConfig) -> Result<Self> {
        Self::build(LossKind::LmfbMt, mt, Some(extractor), None, None)
    }

    pub fn ssl_mt(encoder: SharedEncoder, weights: LayerWeights, mt: MultitaskConfig) -> Result<Self> {
        if weights.len() != encoder.n_layers() {
            return Err(Error::LengthMismatch(weights.len(), encoder.n_layers()));
        }
        Self::build(LossKind::SslMt, mt, None, Some((encoder, weights)), None)
    }

    pub fn asr_mt(recognizer: SharedRecognizer, mt: MultitaskConfig) -> Result<Self> {
        Self::build(LossKind::AsrMt, mt, None, None, Some(recognizer))
    }

    fn build(
        kind: LossKind,
        mt: MultitaskConfig,
        lmfb: Option<LmfbExtractor>,
        ssl: Option<(SharedEncoder, LayerWeights)>,
        recognizer: Option<SharedRecognizer>,
    ) -> Result<Self> {
        mt.validate()?;
        Ok(Self {
            kind,
            mt,
            lmfb,
            ssl,
            recognizer,
        })
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn multitask(&self) -> &MultitaskConfig {
        &self.mt
    }

    pub fn encoder(&self) -> Option<&SharedEncoder> {
        self.ssl.as_ref().map(|(e, _)| e)
    }

    pub fn recognizer(&self) -> Option<&SharedRecognizer> {
        self.recognizer.as_ref()
    }

    /// Whether the criterion needs token targets for each utterance.
    pub fn needs_targets(&self) -> bool {
        self.kind == LossKind::AsrMt
    }

    /// Evaluates the criterion on `[batch, time]` estimates and references.
    pub fn evaluate(&self, est: &Tensor, reference: &Tensor, targets: Option<&[Vec<u32>]>) -> Result<LossTerms> {
        let mut components = BTreeMap::new();
        let snr = snr_loss_tensor(est, reference, self.mt.epsilon, self.mt.snr_numerator)?;
        components.insert("snr".to_string(), tensor::tensor_values(&snr)?);
        let snr_mean = snr.mean_all()?;
        let primary = match self.kind {
            LossKind::Snr => None,
            LossKind::LmfbMt => {
                let ex = self.lmfb.as_ref().expect("lmfb criterion has an extractor");
                let d = lmfb_distance_tensor(ex, est, reference)?;
                components.insert("lmfb".into(), tensor::tensor_values(&d)?);
                Some(d.mean_all()?)
            }
            LossKind::SslMt => {
                let (enc, w) = self.ssl.as_ref().expect("ssl criterion has an encoder");
                let d = ssl_mse_tensor(enc, w, est, reference)?;
                components.insert("ssl_mse".into(), tensor::tensor_values(&d)?);
                Some(d.mean_all()?)
            }
            LossKind::AsrMt => {
                let rec = self.recognizer.as_ref().expect("asr criterion has a recognizer");
                let targets = targets.ok_or_else(|| Error::Vocabulary("asr_mt needs token targets".into()))?;
                let (ctc, att) = rec.losses(est, targets)?;
                let (cv, av) = (tensor::tensor_values(&ctc)?, tensor::tensor_values(&att)?);
                let lambda = self.mt.lambda;
                let asr: Vec<f64> = cv.iter().zip(&av).map(|(c, a)| lambda * c + (1.0 - lambda) * a).collect();
                components.insert("ctc".into(), cv);
                components.insert("att".into(), av);
                components.insert("asr".into(), asr);
                let combined = match lambda {
                    l if l == 1.0 => ctc,
                    l if l == 0.0 => att,
                    l => ((ctc * l)? + (att * (1.0 - l))?)?,
                };
                Some(combined.mean_all()?)
            }
        };
        let total = match primary {
            None => snr_mean,
            Some(p) if self.mt.alpha == 0.0 => p,
            Some(p) => (p + (snr_mean * self.mt.alpha)?)?,
        };
        Ok(LossTerms { total, components })
    }

    /// Recombines batch-mean components into a [`LossValue`].
    pub fn combine(&self, means: BTreeMap<String, f64>) -> Result<LossValue> {
        LossValue::combine(self.kind, &self.mt, means)
    }

    /// Single-pair evaluation in double precision.
    pub fn loss_value(&self, est: &Waveform, reference: &Waveform, target: Option<&[u32]>) -> Result<LossValue> {
        est.check_compatible(reference)?;
        let e = tensor::wave_tensor(est, DType::F64)?;
        let r = tensor::wave_tensor(reference, DType::F64)?;
        let targets = target.map(|t| vec![t.to_vec()]);
        let terms = self.evaluate(&e, &r, targets.as_deref())?;
        self.combine(terms.means())
    }
}

/// Scale-dependent SNR loss of an estimate against its reference.
pub fn snr_loss(est: &Waveform, reference: &Waveform, epsilon: f64) -> Result<f64> {
    snr_loss_with(est, reference, epsilon, SnrNumerator::Estimate)
}

pub fn snr_loss_with(est: &Waveform, reference: &Waveform, epsilon: f64, numerator: SnrNumerator) -> Result<f64> {
    est.check_compatible(reference)?;
    let e = tensor::wave_tensor(est, DType::F64)?;
    let r = tensor::wave_tensor(reference, DType::F64)?;
    Ok(tensor::tensor_values(&snr_loss_tensor(&e, &r, epsilon, numerator)?)?[0])
}

pub fn lmfb_mt_loss(est: &Waveform, reference: &Waveform, cfg: &LmfbConfig, alpha: f64) -> Result<LossValue> {
    let ex = LmfbExtractor::new(cfg, reference.sample_rate())?;
    Criterion::lmfb_mt(ex, MultitaskConfig::with_alpha(alpha))?.loss_value(est, reference, None)
}

pub fn asr_mt_loss(
    est: &Waveform,
    reference: &Waveform,
    target: &[u32],
    recognizer: SharedRecognizer,
    mt: MultitaskConfig,
) -> Result<LossValue> {
    Criterion::asr_mt(recognizer, mt)?.loss_value(est, reference, Some(target))
}

pub fn ssl_mse_loss(est: &Waveform, reference: &Waveform, encoder: SharedEncoder, weights: &LayerWeights) -> Result<f64> {
    est.check_compatible(reference)?;
    encoder.frame_count(est.len())?;
    let e = tensor::wave_tensor(est, DType::F64)?;
    let r = tensor::wave_tensor(reference, DType::F64)?;
    Ok(tensor::tensor_values(&ssl_mse_tensor(&encoder, weights, &e, &r)?)?[0])
}

pub fn ssl_mt_loss(
    est: &Waveform,
    reference: &Waveform,
    encoder: SharedEncoder,
    weights: &LayerWeights,
    alpha: f64,
) -> Result<LossValue> {
    encoder.frame_count(est.len())?;
    Criterion::ssl_mt(encoder, weights.clone(), MultitaskConfig::with_alpha(alpha))?.loss_value(est, reference, None)
}

/// Gradient of a criterion total w.r.t. a single estimate, in `f64`.
pub fn estimate_gradient(criterion: &Criterion, est: &Waveform, reference: &Waveform, target: Option<&[u32]>) -> Result<Vec<f64>> {
    est.check_compatible(reference)?;
    let var = candle_core::Var::from_tensor(&tensor::wave_tensor(est, DType::F64)?)?;
    let r = tensor::wave_tensor(reference, DType::F64)?;
    let targets = target.map(|t| vec![t.to_vec()]);
    let terms = criterion.evaluate(var.as_tensor(), &r, targets.as_deref())?;
    let grads = terms.total.backward()?;
    match grads.get(var.as_tensor()) {
        Some(g) => tensor::tensor_values(g),
        None => Ok(vec![0.0; est.len()]),
    }
}
