//! Train, dev and eval sets from manifests or from the synthetic generator.

use std::path::{Path, PathBuf};

use sslse::config::GlobalConfig;
use sslse::signal::{read_manifest, simulate_dataset, DatasetSource, MixtureExample};
use sslse::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl Split {
    fn seed_offset(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Dev => 1,
            Split::Eval => 2,
        }
    }
}

pub fn manifest_source(path: &Path) -> Result<DatasetSource> {
    let entries = read_manifest(path)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    Ok(DatasetSource::Manifest { entries, base_dir })
}

/// Each split draws from its own seed so the sets never share mixtures.
pub fn load_split(cfg: &GlobalConfig, split: Split) -> Result<Vec<MixtureExample>> {
    let sig = &cfg.signal;
    let (manifest, count, range) = match split {
        Split::Train => (&cfg.paths.train_manifest, sig.train_count, sig.train_snr_db),
        Split::Dev => (&cfg.paths.dev_manifest, sig.dev_count, sig.train_snr_db),
        Split::Eval => (&cfg.paths.eval_manifest, sig.eval_count, sig.eval_snr_db),
    };
    let seed = cfg.seed.wrapping_add(split.seed_offset());
    let (source, count) = match manifest {
        Some(p) => {
            let src = manifest_source(p)?;
            let n = match &src {
                DatasetSource::Manifest { entries, .. } => entries.len(),
                DatasetSource::Synthetic(_) => count,
            };
            (src, n)
        }
        None => (DatasetSource::Synthetic(sig.synthetic()), count),
    };
    let set = simulate_dataset(&source, (range[0], range[1]), count, seed)?;
    log::info!("{split:?} set: {} mixtures", set.len());
    Ok(set)
}
