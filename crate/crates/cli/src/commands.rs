use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sslse::config::GlobalConfig;
use sslse::encoder::{EncoderAdapter, SharedEncoder};
use sslse::enhancer::observation_add;
use sslse::evaluation::{
    alpha_dir_name, emit_plots, evaluate_system, noisy_baseline, read_report, run_external_scorer, sweep_alpha,
    write_report, EvalContext, MetricsRow, System,
};
use sslse::features::LmfbExtractor;
use sslse::losses::{toy_recognizer, Criterion, LossKind, MultitaskConfig};
use sslse::signal::{
    read_wav, simulate_dataset, write_manifest, write_wav, DatasetSource, ManifestEntry, MixtureExample, WavEncoding,
    Waveform,
};
use sslse::training::{self, Checkpoint, TrainOutcome, BEST_CHECKPOINT};
use sslse::{Error, Result};

use crate::data::{load_split, manifest_source, Split};
use crate::{EnhanceArgs, EvaluateArgs, FinetuneArgs, ReportArgs, SimulateArgs, SweepArgs, SystemArg, TrainArgs};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

/// A missing checkpoint is a usage error, not an I/O failure.
fn existing_checkpoint(cfg: &GlobalConfig, given: &Option<PathBuf>) -> Result<PathBuf> {
    let path = given
        .clone()
        .unwrap_or_else(|| cfg.paths.work_dir.join("pretrain").join(BEST_CHECKPOINT));
    if !path.is_file() {
        return Err(Error::InvalidConfig(format!("checkpoint {} not found", path.display())));
    }
    Ok(path)
}

fn shared_encoder(cfg: &GlobalConfig) -> Result<SharedEncoder> {
    Ok(Arc::from(cfg.build_encoder()?))
}

fn build_criterion(cfg: &GlobalConfig, kind: LossKind, mt: MultitaskConfig, encoder: &SharedEncoder) -> Result<Criterion> {
    let sr = cfg.signal.sample_rate;
    match kind {
        LossKind::Snr => Err(Error::InvalidConfig("fine-tuning needs a multitask loss, not snr".into())),
        LossKind::LmfbMt => Criterion::lmfb_mt(LmfbExtractor::new(&cfg.features, sr)?, mt),
        LossKind::SslMt => Criterion::ssl_mt(encoder.clone(), cfg.layer_weights(encoder.as_ref())?, mt),
        LossKind::AsrMt => {
            let rc = cfg
                .losses
                .recognizer
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("asr_mt needs a [losses.recognizer] section".into()))?;
            Criterion::asr_mt(Arc::new(toy_recognizer(rc, sr)?), mt)
        }
    }
}

fn summarize(outcome: &TrainOutcome) {
    let best = outcome
        .records
        .iter()
        .min_by(|a, b| a.dev_total.total_cmp(&b.dev_total));
    if let Some(b) = best {
        println!("best dev loss {:.4} at epoch {}", b.dev_total, b.epoch);
    }
    println!("best checkpoint: {}", outcome.best_path.display());
    println!("last checkpoint: {}", outcome.last_path.display());
    println!("epoch log: {}", outcome.log_path.display());
    println!("parameter checksum: {}", outcome.final_checksum);
}

pub fn simulate(cfg: &GlobalConfig, a: &SimulateArgs) -> Result<()> {
    let count = a.count.unwrap_or(cfg.signal.train_count);
    let lo = a.snr_lo.unwrap_or(cfg.signal.train_snr_db[0]);
    let hi = a.snr_hi.unwrap_or(cfg.signal.train_snr_db[1]);
    let out = a.out.clone().unwrap_or_else(|| cfg.paths.work_dir.join("data"));
    let set = simulate_dataset(&DatasetSource::Synthetic(cfg.signal.synthetic()), (lo, hi), count, cfg.seed)?;
    for sub in ["clean", "noise", "noisy"] {
        create_dir(&out.join(sub))?;
    }
    let mut entries = Vec::with_capacity(set.len());
    for ex in &set {
        let name = format!("{}.wav", ex.id);
        write_wav(out.join("clean").join(&name), &ex.clean, WavEncoding::Float32)?;
        write_wav(out.join("noise").join(&name), &ex.noise, WavEncoding::Float32)?;
        write_wav(out.join("noisy").join(&name), &ex.noisy, WavEncoding::Float32)?;
        entries.push(ManifestEntry {
            clean_path: format!("clean/{name}"),
            noise_path: Some(format!("noise/{name}")),
            snr_db: Some(ex.snr_db),
            id: ex.id.clone(),
        });
    }
    let manifest = out.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    let snrs: Vec<f64> = set.iter().map(|e| e.snr_db).collect();
    let mean = snrs.iter().sum::<f64>() / snrs.len() as f64;
    let min = snrs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = snrs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("wrote {} mixtures to {}", set.len(), out.display());
    println!("manifest: {}", manifest.display());
    println!("snr_db min {min:.2} mean {mean:.2} max {max:.2}");
    Ok(())
}

pub fn train(cfg: &GlobalConfig, a: &TrainArgs) -> Result<()> {
    let mut tc = cfg.pretrain_config();
    if a.epochs.is_some() {
        tc.max_epochs = a.epochs;
    }
    tc.validate()?;
    let out = a.out.clone().unwrap_or_else(|| cfg.paths.work_dir.join("pretrain"));
    let train = load_split(cfg, Split::Train)?;
    let dev = load_split(cfg, Split::Dev)?;
    let outcome = training::pretrain(&cfg.enhancer, &train, &dev, &tc, &out, a.resume)?;
    summarize(&outcome);
    Ok(())
}

pub fn finetune(mut cfg: GlobalConfig, a: &FinetuneArgs) -> Result<()> {
    if let Some(k) = a.loss {
        if k == LossKind::Snr {
            return Err(Error::InvalidConfig("fine-tuning needs a multitask loss, not snr".into()));
        }
        cfg.losses.kind = k;
    }
    if let Some(v) = a.alpha {
        cfg.losses.alpha = v;
    }
    if let Some(v) = a.lambda {
        cfg.losses.lambda = v;
    }
    cfg.validate()?;
    let mut tc = cfg.finetune_config();
    if a.epochs.is_some() {
        tc.max_epochs = a.epochs;
    }
    tc.validate()?;
    let encoder = shared_encoder(&cfg)?;
    let criterion = build_criterion(&cfg, cfg.losses.kind, cfg.losses.multitask(), &encoder)?;
    let init = Checkpoint::load(existing_checkpoint(&cfg, &a.init)?)?;
    let out = a.out.clone().unwrap_or_else(|| {
        cfg.paths
            .work_dir
            .join("finetune")
            .join(format!("{}_{}", cfg.losses.kind, alpha_dir_name(cfg.losses.alpha)))
    });
    let train = load_split(&cfg, Split::Train)?;
    let dev = load_split(&cfg, Split::Dev)?;
    let outcome = training::finetune(&init, &criterion, &train, &dev, &tc, &out, a.resume)?;
    summarize(&outcome);
    Ok(())
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let read = fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut files: Vec<PathBuf> = read
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

/// `(output name, observation)` pairs for an enhancement input.
fn enhancement_inputs(cfg: &GlobalConfig, input: &Path) -> Result<Vec<(String, Waveform)>> {
    let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if input.is_dir() {
        let files = wav_files(input)?;
        if files.is_empty() {
            return Err(Error::InvalidConfig(format!("no WAV files in {}", input.display())));
        }
        return files.iter().map(|p| Ok((stem(p), read_wav(p)?))).collect();
    }
    let is_manifest = input
        .extension()
        .is_some_and(|x| x.eq_ignore_ascii_case("jsonl") || x.eq_ignore_ascii_case("json"));
    if is_manifest {
        let source = manifest_source(input)?;
        let count = match &source {
            DatasetSource::Manifest { entries, .. } => entries.len(),
            DatasetSource::Synthetic(_) => unreachable!("manifest source"),
        };
        let [lo, hi] = cfg.signal.eval_snr_db;
        let set = simulate_dataset(&source, (lo, hi), count, cfg.seed)?;
        return Ok(set.into_iter().map(|e| (e.id, e.noisy)).collect());
    }
    Ok(vec![(stem(input), read_wav(input)?)])
}

pub fn enhance(cfg: &GlobalConfig, a: &EnhanceArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.beta) {
        return Err(Error::RatioOutOfRange(a.beta));
    }
    let model = Checkpoint::load(existing_checkpoint(cfg, &a.checkpoint)?)?.to_model()?;
    let inputs = enhancement_inputs(cfg, &a.input)?;
    create_dir(&a.out)?;
    for (name, noisy) in &inputs {
        let est = model.enhance(noisy)?;
        let mixed = observation_add(noisy, &est, a.beta)?;
        write_wav(a.out.join(format!("{name}.wav")), &mixed, WavEncoding::Float32)?;
    }
    println!("enhanced {} file(s) into {} with beta {}", inputs.len(), a.out.display(), a.beta);
    Ok(())
}

fn print_rows(rows: &[MetricsRow]) {
    println!(
        "{:<20} {:>6} {:>10} {:>10} {:>10} {:>12} {:>5}",
        "system", "beta", "alpha", "si_sdr_db", "sd_snr_db", "ssl_mse", "n"
    );
    for r in rows {
        let alpha = r.alpha.map(|a| format!("{a:e}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<20} {:>6} {:>10} {:>10.3} {:>10.3} {:>12.5e} {:>5}",
            r.system, r.beta, alpha, r.si_sdr_db, r.sd_snr_db, r.ssl_feature_mse, r.n_utterances
        );
    }
}

fn finish_report(rows: &[MetricsRow], report: &Path, plots: bool) -> Result<()> {
    let dir = report.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    create_dir(&dir)?;
    write_report(rows, report)?;
    print_rows(rows);
    println!("report: {}", report.display());
    if plots {
        for p in emit_plots(rows, &dir)? {
            println!("plot: {}", p.display());
        }
    }
    Ok(())
}

/// Writes reference and estimate WAVs and hands the pairs to the configured
/// scorer; the scores land next to the report.
fn run_scorer(command: &[String], eval: &[MixtureExample], estimates: &[Waveform], report: &Path) -> Result<()> {
    let dir = report.with_extension("scorer");
    let (ref_dir, est_dir) = (dir.join("ref"), dir.join("est"));
    create_dir(&ref_dir)?;
    create_dir(&est_dir)?;
    let mut pairs = Vec::with_capacity(eval.len());
    for (ex, est) in eval.iter().zip(estimates) {
        let r = ref_dir.join(format!("{}.wav", ex.id));
        let e = est_dir.join(format!("{}.wav", ex.id));
        write_wav(&r, &ex.clean, WavEncoding::Float32)?;
        write_wav(&e, est, WavEncoding::Float32)?;
        pairs.push((r, e));
    }
    let scores = run_external_scorer(command, &pairs)?;
    let mut text = String::new();
    for (id, s) in &scores {
        text.push_str(&format!("{id}\t{s}\n"));
    }
    let path = dir.join("scores.tsv");
    fs::write(&path, text).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let mean = scores.iter().map(|s| s.1).sum::<f64>() / scores.len().max(1) as f64;
    println!("external scorer: mean {mean:.4} over {} pairs ({})", scores.len(), path.display());
    Ok(())
}

pub fn evaluate(cfg: &GlobalConfig, a: &EvaluateArgs) -> Result<()> {
    let betas = a.betas.clone().unwrap_or_else(|| cfg.evaluation.betas.clone());
    let encoder = cfg.build_encoder()?;
    let weights = cfg.layer_weights(encoder.as_ref())?;
    let ctx = EvalContext {
        encoder: encoder.as_ref(),
        weights: &weights,
        numerator: cfg.losses.snr_numerator,
        workers: cfg.evaluation.workers,
    };
    let model = match a.system {
        SystemArg::Model => Some(Checkpoint::load(existing_checkpoint(cfg, &a.checkpoint)?)?.to_model()?),
        _ => None,
    };
    let (system, default_label) = match (&model, a.system) {
        (Some(m), _) => (System::Model(m), "model"),
        (None, SystemArg::Oracle) => (System::Oracle, "oracle"),
        (None, _) => (System::Passthrough, "passthrough"),
    };
    let label = a.label.clone().unwrap_or_else(|| default_label.to_string());
    let eval = load_split(cfg, Split::Eval)?;
    let mut rows = vec![noisy_baseline(&ctx, &eval)?];
    rows.extend(evaluate_system(system, &label, None, &ctx, &eval, &betas)?);
    let report = a.report.clone().unwrap_or_else(|| cfg.paths.work_dir.join("eval").join("report.csv"));
    finish_report(&rows, &report, !a.no_plots)?;
    if let Some(cmd) = &cfg.evaluation.scorer {
        let beta = betas[0];
        let estimates = eval
            .iter()
            .map(|ex| {
                let est = match &model {
                    Some(m) => m.enhance(&ex.noisy)?,
                    None if a.system == SystemArg::Oracle => ex.clean.clone(),
                    None => ex.noisy.clone(),
                };
                observation_add(&ex.noisy, &est, beta)
            })
            .collect::<Result<Vec<_>>>()?;
        run_scorer(cmd, &eval, &estimates, &report)?;
    }
    Ok(())
}

pub fn sweep(mut cfg: GlobalConfig, a: &SweepArgs) -> Result<()> {
    if let Some(k) = a.loss {
        if k == LossKind::Snr {
            return Err(Error::InvalidConfig("the sweep needs a multitask loss, not snr".into()));
        }
        cfg.losses.kind = k;
    }
    if let Some(al) = &a.alphas {
        cfg.evaluation.alphas = al.clone();
    }
    cfg.validate()?;
    let mut tc = cfg.finetune_config();
    if a.epochs.is_some() {
        tc.max_epochs = a.epochs;
    }
    tc.validate()?;
    let encoder = shared_encoder(&cfg)?;
    let weights = cfg.layer_weights(encoder.as_ref())?;
    let kind = cfg.losses.kind;
    let base_mt = cfg.losses.multitask();
    // build once so configuration errors surface before any data is loaded
    build_criterion(&cfg, kind, base_mt, &encoder)?;
    let init = Checkpoint::load(existing_checkpoint(&cfg, &a.init)?)?;
    let train = load_split(&cfg, Split::Train)?;
    let dev = load_split(&cfg, Split::Dev)?;
    let eval = load_split(&cfg, Split::Eval)?;
    let ctx = EvalContext {
        encoder: encoder.as_ref() as &dyn EncoderAdapter,
        weights: &weights,
        numerator: cfg.losses.snr_numerator,
        workers: cfg.evaluation.workers,
    };
    let make = |alpha: f64| build_criterion(&cfg, kind, MultitaskConfig { alpha, ..base_mt }, &encoder);
    let out_dir = cfg.paths.work_dir.join("sweep");
    let report = a.report.clone().unwrap_or_else(|| out_dir.join("report.csv"));
    let result = sweep_alpha(&init, &cfg.sweep_spec(), make, &tc, &train, &dev, &eval, &ctx, &out_dir)?;
    finish_report(&result.rows, &report, !a.no_plots)
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let rows = read_report(&a.input)?;
    print_rows(&rows);
    if let Some(out) = &a.out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            create_dir(dir)?;
        }
        write_report(&rows, out)?;
        println!("report: {}", out.display());
    }
    if let Some(dir) = &a.plots {
        for p in emit_plots(&rows, dir)? {
            println!("plot: {}", p.display());
        }
    }
    Ok(())
}

pub fn show_config(cfg: &GlobalConfig) -> Result<()> {
    print!("{}", cfg.to_toml_string()?);
    Ok(())
}
