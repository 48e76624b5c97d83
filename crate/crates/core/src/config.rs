//! The experiment configuration file (TOML).
//!
//! Every section is optional and falls back to the defaults of its module.
//! Unknown keys are rejected and every section is validated on load.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{make_layer_weights, toy_encoder, EncoderAdapter, LayerWeights, ToyEncoderConfig, WeightScheme};
use crate::enhancer::ConvTasNetConfig;
use crate::error::{Error, Result};
use crate::evaluation::{SweepSpec, DEFAULT_ALPHAS, DEFAULT_BETAS};
use crate::features::{LmfbConfig, LmfbExtractor};
use crate::losses::{LossKind, MultitaskConfig, SnrNumerator, ToyRecognizerConfig};
use crate::signal::SyntheticSpec;
use crate::training::{AdamConfig, Stage, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub work_dir: PathBuf,
    pub train_manifest: Option<PathBuf>,
    pub dev_manifest: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            work_dir: PathBuf::from("work"),
            train_manifest: None,
            dev_manifest: None,
            eval_manifest: None,
        }
    }
}

/// Corpus sizes and SNR ranges used when no manifest is configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalSection {
    pub sample_rate: u32,
    pub n_samples: usize,
    pub train_count: usize,
    pub dev_count: usize,
    pub eval_count: usize,
    pub train_snr_db: [f64; 2],
    pub eval_snr_db: [f64; 2],
}

impl Default for SignalSection {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            n_samples: 8000,
            train_count: 500,
            dev_count: 50,
            eval_count: 100,
            train_snr_db: [-3.0, 20.0],
            eval_snr_db: [0.0, 10.0],
        }
    }
}

impl SignalSection {
    pub fn synthetic(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_samples: self.n_samples,
            sample_rate: self.sample_rate,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.n_samples == 0 {
            return Err(Error::InvalidConfig("signal: sample_rate and n_samples must be positive".into()));
        }
        if self.train_count == 0 || self.dev_count == 0 || self.eval_count == 0 {
            return Err(Error::InvalidConfig("signal: corpus counts must be positive".into()));
        }
        for (name, [lo, hi]) in [("train_snr_db", self.train_snr_db), ("eval_snr_db", self.eval_snr_db)] {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::InvalidConfig(format!("signal: {name} [{lo}, {hi}] is not a range")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    /// Adapter descriptor; the toy encoder is used when absent.
    pub adapter: Option<PathBuf>,
    pub toy: ToyEncoderConfig,
    pub weights: WeightScheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossesSection {
    pub kind: LossKind,
    pub alpha: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub snr_numerator: SnrNumerator,
    /// Required for `asr_mt`.
    pub recognizer: Option<ToyRecognizerConfig>,
}

impl Default for LossesSection {
    fn default() -> Self {
        let mt = MultitaskConfig::default();
        Self {
            kind: LossKind::SslMt,
            alpha: mt.alpha,
            lambda: mt.lambda,
            epsilon: mt.epsilon,
            snr_numerator: mt.snr_numerator,
            recognizer: None,
        }
    }
}

impl LossesSection {
    pub fn multitask(&self) -> MultitaskConfig {
        MultitaskConfig {
            alpha: self.alpha,
            lambda: self.lambda,
            epsilon: self.epsilon,
            snr_numerator: self.snr_numerator,
        }
    }
}

/// Optimizer settings of one stage; `grad_clip = 0` disables clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSection {
    pub initial_lr: Option<f64>,
    pub lr_factor: f64,
    pub patience_epochs: usize,
    pub max_epochs: Option<usize>,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub segment_len: Option<usize>,
    pub optimizer: AdamConfig,
}

impl Default for StageSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            initial_lr: None,
            lr_factor: t.lr_factor,
            patience_epochs: t.patience_epochs,
            max_epochs: None,
            batch_size: t.batch_size,
            grad_clip: t.grad_clip.unwrap_or(0.0),
            segment_len: None,
            optimizer: t.optimizer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub pretrain: StageSection,
    pub finetune: StageSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub workers: usize,
    /// External per-utterance scorer command, if any.
    pub scorer: Option<Vec<String>>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            betas: DEFAULT_BETAS.to_vec(),
            alphas: DEFAULT_ALPHAS.to_vec(),
            workers: 1,
            scorer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalConfig {
    pub seed: u64,
    pub paths: PathsSection,
    pub signal: SignalSection,
    pub features: LmfbConfig,
    pub encoder: EncoderSection,
    pub enhancer: ConvTasNetConfig,
    pub losses: LossesSection,
    pub training: TrainingSection,
    pub evaluation: EvaluationSection,
}

impl GlobalConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: GlobalConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.signal.validate()?;
        self.features.validate()?;
        LmfbExtractor::new(&self.features, self.signal.sample_rate)?;
        self.enhancer.validate()?;
        if self.encoder.adapter.is_none() {
            let n = self.encoder.toy.n_layers;
            make_layer_weights(n, &self.encoder.weights)?;
        }
        self.losses.multitask().validate()?;
        if self.losses.kind == LossKind::Snr {
            return Err(Error::InvalidConfig("losses: kind selects the fine-tuning loss and cannot be snr".into()));
        }
        self.pretrain_config().validate()?;
        self.finetune_config().validate()?;
        self.sweep_spec().validate()?;
        if self.evaluation.workers == 0 {
            return Err(Error::InvalidConfig("evaluation: workers must be at least 1".into()));
        }
        if matches!(&self.evaluation.scorer, Some(c) if c.is_empty()) {
            return Err(Error::InvalidConfig("evaluation: scorer command is empty".into()));
        }
        Ok(())
    }

    fn stage_config(&self, stage: Stage, section: &StageSection, loss: LossKind, mt: MultitaskConfig) -> TrainConfig {
        TrainConfig {
            stage,
            initial_lr: section.initial_lr,
            lr_factor: section.lr_factor,
            patience_epochs: section.patience_epochs,
            max_epochs: section.max_epochs,
            batch_size: section.batch_size,
            seed: self.seed,
            loss: Some(loss),
            multitask: mt,
            optimizer: section.optimizer,
            grad_clip: (section.grad_clip > 0.0).then_some(section.grad_clip),
            segment_len: section.segment_len,
        }
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        self.stage_config(Stage::Pretrain, &self.training.pretrain, LossKind::Snr, self.losses.multitask())
    }

    pub fn finetune_config(&self) -> TrainConfig {
        self.stage_config(Stage::Finetune, &self.training.finetune, self.losses.kind, self.losses.multitask())
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        SweepSpec {
            alphas: self.evaluation.alphas.clone(),
            betas: self.evaluation.betas.clone(),
        }
    }

    /// The configured frozen encoder.
    pub fn build_encoder(&self) -> Result<Box<dyn EncoderAdapter>> {
        match &self.encoder.adapter {
            Some(path) => {
                let d = crate::encoder::AdapterDescriptor::read(path)?;
                crate::encoder::load_external_adapter(&d)
            }
            None => Ok(Box::new(toy_encoder(&self.encoder.toy)?)),
        }
    }

    pub fn layer_weights(&self, encoder: &dyn EncoderAdapter) -> Result<LayerWeights> {
        make_layer_weights(encoder.n_layers(), &self.encoder.weights)
    }
}
