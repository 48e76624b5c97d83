use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One JSON-lines manifest record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub clean_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    pub id: String,
}

impl ManifestEntry {
    fn validate(&self, line: usize) -> Result<()> {
        if self.clean_path.is_empty() {
            return Err(Error::InvalidConfig(format!("manifest line {line}: empty clean_path")));
        }
        if matches!(&self.noise_path, Some(p) if p.is_empty()) {
            return Err(Error::InvalidConfig(format!("manifest line {line}: empty noise_path")));
        }
        if matches!(self.snr_db, Some(s) if !s.is_finite()) {
            return Err(Error::InvalidConfig(format!("manifest line {line}: non-finite snr_db")));
        }
        Ok(())
    }
}

/// Reads a manifest; blank lines are skipped.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| {
            Error::InvalidConfig(format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        entry.validate(i + 1)?;
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(Error::EmptyManifest);
    }
    Ok(entries)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_optional_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        fs::write(
            &p,
            "{\"clean_path\":\"a.wav\",\"id\":\"a\"}\n\n{\"clean_path\":\"b.wav\",\"noise_path\":\"n.wav\",\"snr_db\":3.5,\"id\":\"b\"}\n",
        )
        .unwrap();
        let m = read_manifest(&p).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].noise_path, None);
        assert_eq!(m[1].snr_db, Some(3.5));
        let q = dir.path().join("q.jsonl");
        write_manifest(&q, &m).unwrap();
        assert_eq!(read_manifest(&q).unwrap(), m);
    }

    #[test]
    fn empty_and_invalid_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        fs::write(&p, "\n\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::EmptyManifest)));
        fs::write(&p, "{\"clean_path\":\"\",\"id\":\"x\"}\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::InvalidConfig(_))));
        fs::write(&p, "{\"clean_path\":\"a\",\"id\":\"x\",\"extra\":1}\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::InvalidConfig(_))));
    }
}
