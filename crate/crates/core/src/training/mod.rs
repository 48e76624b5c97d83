//! SNR pre-training and multitask fine-tuning.
//!
//! Both stages share one loop: seeded shuffling per epoch, optional random
//! segment crops, Adam with global-norm clipping, a dev pass after every
//! epoch driving the plateau schedule, and `best.ckpt` / `last.ckpt` plus an
//! append-only JSONL epoch log in the output directory.

mod adam;
mod checkpoint;
mod schedule;

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Blob, Checkpoint, OptimizerState, TrainState, CHECKPOINT_MAGIC, FORMAT_VERSION};
pub use schedule::{lr_schedule_step, ScheduleState};

use crate::enhancer::{ConvTasNetConfig, EnhancerModel};
use crate::error::{Error, Result};
use crate::losses::{pseudo_transcript, Criterion, LossKind, LossValue, MultitaskConfig};
use crate::signal::{MixtureExample, Waveform};
use crate::tensor::DEVICE;

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const EPOCH_LOG: &str = "train_log.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    #[default]
    Pretrain,
    Finetune,
}

/// Optimization settings for one stage. Unset learning rate, epoch budget
/// and loss fall back to the stage defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub initial_lr: Option<f64>,
    pub lr_factor: f64,
    pub patience_epochs: usize,
    pub max_epochs: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: Option<LossKind>,
    pub multitask: MultitaskConfig,
    pub optimizer: AdamConfig,
    /// Global gradient-norm bound; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Random training crop length in samples; `None` trains on whole
    /// utterances cropped to the shortest one in the batch.
    pub segment_len: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Pretrain,
            initial_lr: None,
            lr_factor: 0.75,
            patience_epochs: 2,
            max_epochs: None,
            batch_size: 8,
            seed: 0,
            loss: None,
            multitask: MultitaskConfig::default(),
            optimizer: AdamConfig::default(),
            grad_clip: Some(5.0),
            segment_len: None,
        }
    }
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        Self::default()
    }

    pub fn finetune(loss: LossKind) -> Self {
        Self {
            stage: Stage::Finetune,
            loss: Some(loss),
            ..Self::default()
        }
    }

    pub fn initial_lr(&self) -> f64 {
        self.initial_lr.unwrap_or(match self.stage {
            Stage::Pretrain => 5e-4,
            Stage::Finetune => 1e-4,
        })
    }

    pub fn max_epochs(&self) -> usize {
        self.max_epochs.unwrap_or(match self.stage {
            Stage::Pretrain => 100,
            Stage::Finetune => 50,
        })
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss.unwrap_or(match self.stage {
            Stage::Pretrain => LossKind::Snr,
            Stage::Finetune => LossKind::SslMt,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::InvalidConfig(format!("training: {m}")));
        if !(self.initial_lr() > 0.0 && self.initial_lr().is_finite()) {
            return err(format!("initial_lr must be positive, got {}", self.initial_lr()));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return err(format!("lr_factor must be in (0, 1), got {}", self.lr_factor));
        }
        if self.patience_epochs == 0 {
            return err("patience_epochs must be at least 1".into());
        }
        if self.max_epochs() == 0 {
            return err("max_epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return err("batch_size must be at least 1".into());
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return err("grad_clip must be positive".into());
        }
        if self.segment_len == Some(0) {
            return err("segment_len must be positive".into());
        }
        match (self.stage, self.loss_kind()) {
            (Stage::Pretrain, LossKind::Snr) => {}
            (Stage::Pretrain, k) => return err(format!("pre-training uses the snr loss, not {k}")),
            (Stage::Finetune, LossKind::Snr) => return err("fine-tuning needs a multitask loss".into()),
            (Stage::Finetune, _) => {}
        }
        self.multitask.validate()?;
        self.optimizer.validate()
    }
}

/// One line of the epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_total: f64,
    pub train_components: BTreeMap<String, f64>,
    pub dev_total: f64,
    pub dev_components: BTreeMap<String, f64>,
    pub wall_time_s: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub best_path: PathBuf,
    pub last_path: PathBuf,
    pub log_path: PathBuf,
    /// Records written by this run (a resumed run skips earlier epochs).
    pub records: Vec<EpochRecord>,
    pub final_state: TrainState,
    pub final_checksum: String,
}

pub fn read_epoch_log(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// SNR-loss pre-training from a seeded initialization, or from
/// `out_dir/last.ckpt` when `resume` is set and the file exists.
pub fn pretrain(
    enhancer: &ConvTasNetConfig,
    train: &[MixtureExample],
    dev: &[MixtureExample],
    cfg: &TrainConfig,
    out_dir: &Path,
    resume: bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.stage != Stage::Pretrain {
        return Err(Error::InvalidConfig("pretrain needs stage = pretrain".into()));
    }
    let criterion = Criterion::snr(cfg.multitask)?;
    let start = match resume_point(out_dir, resume)? {
        Some(c) => Start::Resume(c),
        None => Start::Fresh(EnhancerModel::init(enhancer, cfg.seed)?),
    };
    run(start, &criterion, train, dev, cfg, out_dir)
}

/// Multitask fine-tuning from a pre-trained checkpoint. Optimizer and
/// schedule start fresh; `resume` continues an interrupted fine-tuning run.
pub fn finetune(
    init: &Checkpoint,
    criterion: &Criterion,
    train: &[MixtureExample],
    dev: &[MixtureExample],
    cfg: &TrainConfig,
    out_dir: &Path,
    resume: bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.stage != Stage::Finetune {
        return Err(Error::InvalidConfig("finetune needs stage = finetune".into()));
    }
    if criterion.kind() != cfg.loss_kind() {
        return Err(Error::InvalidConfig(format!(
            "criterion {} does not match configured loss {}",
            criterion.kind(),
            cfg.loss_kind()
        )));
    }
    if let Some(enc) = criterion.encoder() {
        if !enc.differentiable() {
            return Err(Error::ContractViolation("ssl_mt training needs a differentiable encoder".into()));
        }
    }
    let start = match resume_point(out_dir, resume)? {
        Some(c) => Start::Resume(c),
        None => Start::Fresh(init.to_model()?),
    };
    run(start, criterion, train, dev, cfg, out_dir)
}

fn resume_point(out_dir: &Path, resume: bool) -> Result<Option<Checkpoint>> {
    let last = out_dir.join(LAST_CHECKPOINT);
    if resume && last.exists() {
        Ok(Some(Checkpoint::load(&last)?))
    } else {
        Ok(None)
    }
}

enum Start {
    Fresh(EnhancerModel),
    Resume(Checkpoint),
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

fn crop_tensor(waves: &[(&Waveform, usize)], len: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(waves.len() * len);
    for (w, off) in waves {
        data.extend(w.samples()[*off..off + len].iter().map(|&v| v as f32));
    }
    Ok(Tensor::from_vec(data, (waves.len(), len), &DEVICE)?.to_dtype(DType::F32)?)
}

struct Batch {
    noisy: Tensor,
    clean: Tensor,
    targets: Option<Vec<Vec<u32>>>,
}

fn make_batch(items: &[&MixtureExample], offsets: &[usize], len: usize, criterion: &Criterion) -> Result<Batch> {
    let noisy: Vec<_> = items.iter().zip(offsets).map(|(e, &o)| (&e.noisy, o)).collect();
    let clean: Vec<_> = items.iter().zip(offsets).map(|(e, &o)| (&e.clean, o)).collect();
    let targets = match criterion.recognizer() {
        Some(rec) if criterion.needs_targets() => Some(
            clean
                .iter()
                .map(|(w, o)| {
                    let seg = Waveform::new(w.samples()[*o..o + len].to_vec(), w.sample_rate())?;
                    pseudo_transcript(rec.as_ref(), &seg)
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        _ => None,
    };
    Ok(Batch {
        noisy: crop_tensor(&noisy, len)?,
        clean: crop_tensor(&clean, len)?,
        targets,
    })
}

#[derive(Default)]
struct Accumulator {
    sums: BTreeMap<String, f64>,
    count: usize,
}

impl Accumulator {
    fn add(&mut self, components: &BTreeMap<String, Vec<f64>>) {
        for (k, v) in components {
            *self.sums.entry(k.clone()).or_default() += v.iter().sum::<f64>();
        }
        self.count += components.values().next().map_or(0, Vec::len);
    }

    fn finish(self, criterion: &Criterion) -> Result<LossValue> {
        let n = self.count as f64;
        criterion.combine(self.sums.into_iter().map(|(k, v)| (k, v / n)).collect())
    }
}

/// Mean criterion value over a set, batching consecutive equal-length
/// utterances without cropping.
pub fn evaluate_loss(model: &EnhancerModel, criterion: &Criterion, set: &[MixtureExample], batch_size: usize) -> Result<LossValue> {
    if set.is_empty() {
        return Err(Error::EmptyDataset("evaluation set"));
    }
    let mut acc = Accumulator::default();
    let mut i = 0;
    while i < set.len() {
        let len = set[i].noisy.len();
        let mut j = i + 1;
        while j < set.len() && j - i < batch_size.max(1) && set[j].noisy.len() == len {
            j += 1;
        }
        let items: Vec<&MixtureExample> = set[i..j].iter().collect();
        let batch = make_batch(&items, &vec![0; items.len()], len, criterion)?;
        let est = model.forward(&batch.noisy)?.detach();
        let terms = criterion.evaluate(&est, &batch.clean, batch.targets.as_deref())?;
        acc.add(&terms.components);
        i = j;
    }
    acc.finish(criterion)
}

fn append_record(path: &Path, rec: &EpochRecord) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(rec)?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

fn run(
    start: Start,
    criterion: &Criterion,
    train: &[MixtureExample],
    dev: &[MixtureExample],
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("training set"));
    }
    if dev.is_empty() {
        return Err(Error::EmptyDataset("dev set"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let best_path = out_dir.join(BEST_CHECKPOINT);
    let last_path = out_dir.join(LAST_CHECKPOINT);
    let log_path = out_dir.join(EPOCH_LOG);
    let mut records = Vec::new();
    let clock = Instant::now();

    let (model, mut opt, mut state) = match start {
        Start::Resume(ckpt) => {
            log::info!("resuming after epoch {}", ckpt.state.epoch);
            (ckpt.to_model()?, ckpt.to_adam(cfg.optimizer)?, ckpt.state)
        }
        Start::Fresh(model) => {
            let _ = fs::remove_file(&log_path);
            let train_value = evaluate_loss(&model, criterion, train, cfg.batch_size)?;
            let dev_value = evaluate_loss(&model, criterion, dev, cfg.batch_size)?;
            let state = TrainState {
                stage: cfg.stage,
                loss: criterion.kind(),
                alpha: criterion.multitask().alpha,
                seed: cfg.seed,
                epoch: 0,
                schedule: ScheduleState::new(cfg.initial_lr()),
                best_dev_loss: dev_value.total.is_finite().then_some(dev_value.total),
                best_epoch: dev_value.total.is_finite().then_some(0),
            };
            let rec = EpochRecord {
                epoch: 0,
                lr: cfg.initial_lr(),
                train_total: train_value.total,
                train_components: train_value.components,
                dev_total: dev_value.total,
                dev_components: dev_value.components,
                wall_time_s: clock.elapsed().as_secs_f64(),
            };
            log::info!("epoch 0 train {:.4} dev {:.4}", rec.train_total, rec.dev_total);
            append_record(&log_path, &rec)?;
            records.push(rec);
            let opt = Adam::new(cfg.optimizer);
            let ckpt = Checkpoint::from_model(&model, Some(&opt), cfg.optimizer, state.clone())?;
            ckpt.save(&best_path)?;
            ckpt.save(&last_path)?;
            (model, opt, state)
        }
    };

    for epoch in state.epoch + 1..=cfg.max_epochs() {
        let lr = state.schedule.current_lr;
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut acc = Accumulator::default();
        for chunk in order.chunks(cfg.batch_size) {
            let items: Vec<&MixtureExample> = chunk.iter().map(|&i| &train[i]).collect();
            let shortest = items.iter().map(|e| e.noisy.len()).min().expect("non-empty chunk");
            let len = cfg.segment_len.map_or(shortest, |s| s.min(shortest));
            let offsets: Vec<usize> = items.iter().map(|e| rng.random_range(0..=e.noisy.len() - len)).collect();
            let batch = make_batch(&items, &offsets, len, criterion)?;
            let est = model.forward(&batch.noisy)?;
            let terms = criterion.evaluate(&est, &batch.clean, batch.targets.as_deref())?;
            let value = terms.total.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(Error::DivergenceDetected { epoch, loss: value });
            }
            let grads = terms.total.backward()?;
            opt.step(model.params(), &grads, lr, cfg.grad_clip)?;
            acc.add(&terms.components);
        }
        let train_value = acc.finish(criterion)?;
        let dev_value = evaluate_loss(&model, criterion, dev, cfg.batch_size)?;
        state.schedule = lr_schedule_step(&state.schedule, dev_value.total, cfg.lr_factor, cfg.patience_epochs)?;
        state.epoch = epoch;
        let improved = state.best_dev_loss.is_none_or(|b| dev_value.total < b);
        if improved {
            state.best_dev_loss = Some(dev_value.total);
            state.best_epoch = Some(epoch);
        }
        let rec = EpochRecord {
            epoch,
            lr,
            train_total: train_value.total,
            train_components: train_value.components,
            dev_total: dev_value.total,
            dev_components: dev_value.components,
            wall_time_s: clock.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch} lr {lr:.3e} train {:.4} dev {:.4}", rec.train_total, rec.dev_total);
        append_record(&log_path, &rec)?;
        records.push(rec);
        let ckpt = Checkpoint::from_model(&model, Some(&opt), cfg.optimizer, state.clone())?;
        if improved {
            ckpt.save(&best_path)?;
        }
        ckpt.save(&last_path)?;
    }
    Ok(TrainOutcome {
        best_path,
        last_path,
        log_path,
        records,
        final_checksum: model.parameter_checksum()?,
        final_state: state,
    })
}
