//! Speech enhancement trained with losses in auxiliary feature spaces.
//!
//! The crate covers the whole desk-scale experiment loop:
//!
//! * [`signal`] – waveforms, WAV I/O, SNR-controlled mixing and corpora.
//! * [`features`] – log mel-filterbank extraction.
//! * [`encoder`] – frozen multi-layer encoders and layer-weighted pooling.
//! * [`enhancer`] – a Conv-TasNet masking network and observation adding.
//! * [`losses`] – SNR, LMFB, ASR and SSL-MSE criteria and their multitask
//!   combinations.
//! * [`training`] – SNR pre-training and multitask fine-tuning with a plateau
//!   learning-rate schedule and checkpoints.
//! * [`evaluation`] – SI-SDR / SNR metrics, observation-adding and α sweeps,
//!   reports and plots.
//! * [`config`] – the experiment configuration file.

pub mod config;
pub mod encoder;
pub mod enhancer;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod losses;
pub mod signal;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
