//! Metrics, observation-adding and α sweeps, reports and plots.

mod metrics;
mod plot;
mod report;
mod scorer;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use metrics::{sd_snr, si_sdr, METRIC_CAP_DB};
pub use plot::{alpha_axis, emit_plots, plot_metric_vs_alpha, plot_metric_vs_beta, AlphaAxis, Metric};
pub use report::{read_report, write_csv, write_json, write_report, ReportFormat, CSV_HEADER};
pub use scorer::run_external_scorer;

use crate::encoder::{encode_layers, EncoderAdapter, LayerWeights};
use crate::enhancer::{observation_add, EnhancerModel};
use crate::error::{Error, Result};
use crate::losses::{ssl_mse_from_features, Criterion, SnrNumerator};
use crate::signal::{MixtureExample, Waveform};
use crate::training::{finetune, Checkpoint, TrainConfig};

/// Mean metrics of one system at one observation-adding ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub system: String,
    pub beta: f64,
    pub alpha: Option<f64>,
    pub si_sdr_db: f64,
    pub sd_snr_db: f64,
    pub ssl_feature_mse: f64,
    pub n_utterances: usize,
}

impl MetricsRow {
    /// True when all metric fields are bit-identical.
    pub fn same_metrics(&self, other: &MetricsRow) -> bool {
        self.si_sdr_db.to_bits() == other.si_sdr_db.to_bits()
            && self.sd_snr_db.to_bits() == other.sd_snr_db.to_bits()
            && self.ssl_feature_mse.to_bits() == other.ssl_feature_mse.to_bits()
            && self.n_utterances == other.n_utterances
    }
}

/// What produces `x̂` from an example.
#[derive(Debug, Clone, Copy)]
pub enum System<'a> {
    Model(&'a EnhancerModel),
    /// `x̂ = y`.
    Passthrough,
    /// `x̂ = x`.
    Oracle,
}

impl System<'_> {
    fn enhance(&self, ex: &MixtureExample) -> Result<Waveform> {
        match self {
            System::Model(m) => m.enhance(&ex.noisy),
            System::Passthrough => Ok(ex.noisy.clone()),
            System::Oracle => Ok(ex.clean.clone()),
        }
    }
}

/// Shared evaluation settings.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub encoder: &'a dyn EncoderAdapter,
    pub weights: &'a LayerWeights,
    pub numerator: SnrNumerator,
    /// Threads for per-utterance work; results do not depend on it.
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct UttMetrics {
    si_sdr: f64,
    sd_snr: f64,
    mse: f64,
}

fn utterance_metrics(ctx: &EvalContext, est: &Waveform, ex: &MixtureExample, clean_feats: &crate::encoder::FeatureSeries) -> Result<UttMetrics> {
    Ok(UttMetrics {
        si_sdr: si_sdr(est, &ex.clean)?,
        sd_snr: sd_snr(est, &ex.clean, ctx.numerator)?,
        mse: ssl_mse_from_features(&encode_layers(ctx.encoder, est)?, clean_feats, ctx.weights)?,
    })
}

/// Runs `f` over `items` on `workers` threads, keeping input order.
fn par_map<T: Sync, U: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> Result<U> + Sync) -> Result<Vec<U>> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Result<Vec<U>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("evaluation worker panicked")?);
        }
        Ok(out)
    })
}

fn mean_row(system: &str, beta: f64, alpha: Option<f64>, per_utt: &[UttMetrics]) -> MetricsRow {
    let n = per_utt.len() as f64;
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for m in per_utt {
        a += m.si_sdr;
        b += m.sd_snr;
        c += m.mse;
    }
    MetricsRow {
        system: system.to_string(),
        beta,
        alpha,
        si_sdr_db: a / n,
        sd_snr_db: b / n,
        ssl_feature_mse: c / n,
        n_utterances: per_utt.len(),
    }
}

/// One row per β: `x̃ = β·y + (1 − β)·x̂` scored against the clean reference.
pub fn evaluate_system(
    system: System,
    label: &str,
    alpha: Option<f64>,
    ctx: &EvalContext,
    eval_set: &[MixtureExample],
    betas: &[f64],
) -> Result<Vec<MetricsRow>> {
    if eval_set.is_empty() {
        return Err(Error::EmptyDataset("evaluation set"));
    }
    if let Some(&b) = betas.iter().find(|b| !(0.0..=1.0).contains(*b)) {
        return Err(Error::RatioOutOfRange(b));
    }
    if ctx.weights.len() != ctx.encoder.n_layers() {
        return Err(Error::LengthMismatch(ctx.weights.len(), ctx.encoder.n_layers()));
    }
    let per_utt: Vec<Vec<UttMetrics>> = par_map(eval_set, ctx.workers, |ex| {
        let enhanced = system.enhance(ex)?;
        let clean_feats = encode_layers(ctx.encoder, &ex.clean)?;
        betas
            .iter()
            .map(|&beta| {
                let mixed = observation_add(&ex.noisy, &enhanced, beta)?;
                utterance_metrics(ctx, &mixed, ex, &clean_feats)
            })
            .collect()
    })?;
    Ok(betas
        .iter()
        .enumerate()
        .map(|(i, &beta)| {
            let col: Vec<UttMetrics> = per_utt.iter().map(|u| u[i]).collect();
            mean_row(label, beta, alpha, &col)
        })
        .collect())
}

/// The unprocessed observation scored directly.
pub fn noisy_baseline(ctx: &EvalContext, eval_set: &[MixtureExample]) -> Result<MetricsRow> {
    if eval_set.is_empty() {
        return Err(Error::EmptyDataset("evaluation set"));
    }
    let per_utt = par_map(eval_set, ctx.workers, |ex| {
        let clean_feats = encode_layers(ctx.encoder, &ex.clean)?;
        utterance_metrics(ctx, &ex.noisy, ex, &clean_feats)
    })?;
    Ok(mean_row("noisy", 1.0, None, &per_utt))
}

pub const DEFAULT_ALPHAS: [f64; 7] = [0.0, 1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0];
pub const DEFAULT_BETAS: [f64; 3] = [0.0, 0.1, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            alphas: DEFAULT_ALPHAS.to_vec(),
            betas: DEFAULT_BETAS.to_vec(),
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.betas.is_empty() {
            return Err(Error::InvalidConfig("sweep needs at least one alpha and one beta".into()));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::InvalidConfig(format!("alpha {a} must be finite and >= 0")));
        }
        if let Some(&b) = self.betas.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return Err(Error::RatioOutOfRange(b));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    /// The SNR-only baseline first, then one row per α, all at β = 0.
    pub rows: Vec<MetricsRow>,
    pub checkpoints: Vec<(f64, PathBuf)>,
}

pub const BASELINE_SYSTEM: &str = "snr_baseline";

pub fn alpha_dir_name(alpha: f64) -> String {
    format!("alpha_{alpha:e}")
}

/// Fine-tunes one model per α from `pretrained` and evaluates each best
/// checkpoint at β = 0 next to the pre-trained model itself.
#[allow(clippy::too_many_arguments)]
pub fn sweep_alpha(
    pretrained: &Checkpoint,
    spec: &SweepSpec,
    make_criterion: impl Fn(f64) -> Result<Criterion>,
    finetune_cfg: &TrainConfig,
    train: &[MixtureExample],
    dev: &[MixtureExample],
    eval_set: &[MixtureExample],
    ctx: &EvalContext,
    out_dir: &Path,
) -> Result<SweepReport> {
    spec.validate()?;
    let base_model = pretrained.to_model()?;
    let mut rows = evaluate_system(System::Model(&base_model), BASELINE_SYSTEM, None, ctx, eval_set, &[0.0])?;
    let mut checkpoints = Vec::new();
    for &alpha in &spec.alphas {
        let criterion = make_criterion(alpha)?;
        let mut cfg = finetune_cfg.clone();
        cfg.multitask.alpha = alpha;
        cfg.loss = Some(criterion.kind());
        let dir = out_dir.join(alpha_dir_name(alpha));
        log::info!("sweep: fine-tuning alpha = {alpha}");
        let outcome = finetune(pretrained, &criterion, train, dev, &cfg, &dir, false)?;
        let model = Checkpoint::load(&outcome.best_path)?.to_model()?;
        let label = format!("{}_alpha", criterion.kind());
        rows.extend(evaluate_system(System::Model(&model), &label, Some(alpha), ctx, eval_set, &[0.0])?);
        checkpoints.push((alpha, outcome.best_path));
    }
    Ok(SweepReport { rows, checkpoints })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::encoder::{make_layer_weights, toy_encoder, SharedEncoder, ToyEncoderConfig, WeightScheme};
    use crate::enhancer::{ConvTasNetConfig, MaskActivation};
    use crate::losses::{LossKind, MultitaskConfig};
    use crate::signal::{simulate_dataset, DatasetSource, SyntheticSpec};
    use crate::training::pretrain;

    fn set(count: usize, seed: u64) -> Vec<MixtureExample> {
        let spec = SyntheticSpec {
            n_samples: 1200,
            sample_rate: 16000,
        };
        simulate_dataset(&DatasetSource::Synthetic(spec), (0.0, 10.0), count, seed).unwrap()
    }

    fn encoder() -> SharedEncoder {
        Arc::new(toy_encoder(&ToyEncoderConfig::default()).unwrap())
    }

    #[test]
    fn passthrough_and_oracle_endpoints() {
        let enc = encoder();
        let w = make_layer_weights(4, &WeightScheme::default()).unwrap();
        let ctx = EvalContext {
            encoder: enc.as_ref(),
            weights: &w,
            numerator: SnrNumerator::Estimate,
            workers: 1,
        };
        let eval = set(6, 9);
        let noisy = noisy_baseline(&ctx, &eval).unwrap();
        let pass = evaluate_system(System::Passthrough, "pass", None, &ctx, &eval, &[0.0, 1.0]).unwrap();
        assert!(pass.iter().all(|r| r.same_metrics(&noisy)));

        let betas = [0.0, 0.1, 0.5, 1.0];
        let oracle = evaluate_system(System::Oracle, "oracle", None, &ctx, &eval, &betas).unwrap();
        assert_eq!(oracle[0].si_sdr_db, METRIC_CAP_DB);
        assert!(oracle[0].ssl_feature_mse <= 1e-12);
        assert!(oracle[3].same_metrics(&noisy));
        for r in &oracle[1..3] {
            assert!(r.si_sdr_db <= oracle[0].si_sdr_db && r.si_sdr_db >= oracle[3].si_sdr_db);
        }

        let threaded = EvalContext { workers: 3, ..ctx };
        let again = evaluate_system(System::Oracle, "oracle", None, &threaded, &eval, &betas).unwrap();
        assert_eq!(again, oracle);
        assert!(matches!(
            evaluate_system(System::Oracle, "o", None, &ctx, &eval, &[1.5]),
            Err(Error::RatioOutOfRange(_))
        ));
        assert!(matches!(noisy_baseline(&ctx, &[]), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn sweep_has_baseline_plus_one_row_per_alpha() {
        let enhancer = ConvTasNetConfig {
            n_filters: 16,
            kernel_len: 8,
            bottleneck: 8,
            repeats: 1,
            blocks_per_repeat: 2,
            conv_channels: 16,
            kernel: 3,
            mask: MaskActivation::Sigmoid,
        };
        let (train, dev, eval) = (set(4, 1), set(2, 2), set(2, 3));
        let dir = tempfile::tempdir().unwrap();
        let pre_cfg = TrainConfig {
            max_epochs: Some(1),
            batch_size: 2,
            ..TrainConfig::pretrain()
        };
        let pre = pretrain(&enhancer, &train, &dev, &pre_cfg, &dir.path().join("pre"), false).unwrap();
        let ckpt = Checkpoint::load(&pre.best_path).unwrap();
        let enc = encoder();
        let w = make_layer_weights(4, &WeightScheme::default()).unwrap();
        let ctx = EvalContext {
            encoder: enc.as_ref(),
            weights: &w,
            numerator: SnrNumerator::Estimate,
            workers: 1,
        };
        let ft = TrainConfig {
            max_epochs: Some(1),
            batch_size: 2,
            ..TrainConfig::finetune(LossKind::SslMt)
        };
        let spec = SweepSpec {
            alphas: vec![0.1],
            betas: vec![0.0],
        };
        let make = |a: f64| Criterion::ssl_mt(enc.clone(), w.clone(), MultitaskConfig::with_alpha(a));
        let report = sweep_alpha(&ckpt, &spec, make, &ft, &train, &dev, &eval, &ctx, &dir.path().join("sweep")).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].system, BASELINE_SYSTEM);
        assert_eq!((report.rows[1].system.as_str(), report.rows[1].alpha), ("ssl_mt_alpha", Some(0.1)));
        assert!(report.checkpoints[0].1.exists());
    }
}
