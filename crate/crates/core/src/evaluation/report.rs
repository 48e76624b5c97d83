use std::fs;
use std::path::Path;

use super::MetricsRow;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 7] = [
    "system",
    "beta",
    "alpha",
    "si_sdr_db",
    "sd_snr_db",
    "ssl_feature_mse",
    "n_utterances",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// From the file extension; anything but `.json` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

/// `alpha` is left empty for rows without one.
pub fn write_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::EmptyReport);
    }
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.system.clone(),
            r.beta.to_string(),
            r.alpha.map(|a| a.to_string()).unwrap_or_default(),
            r.si_sdr_db.to_string(),
            r.sd_snr_db.to_string(),
            r.ssl_feature_mse.to_string(),
            r.n_utterances.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json(rows: &[MetricsRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::EmptyReport);
    }
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(rows)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_report(rows: &[MetricsRow], path: &Path) -> Result<()> {
    match ReportFormat::from_path(path) {
        ReportFormat::Csv => write_csv(rows, path),
        ReportFormat::Json => write_json(rows, path),
    }
}

pub fn read_report(path: &Path) -> Result<Vec<MetricsRow>> {
    let rows = match ReportFormat::from_path(path) {
        ReportFormat::Json => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<Vec<MetricsRow>>(&text)?
        }
        ReportFormat::Csv => {
            let mut r = csv::Reader::from_path(path)?;
            if r.headers()?.iter().ne(CSV_HEADER) {
                return Err(Error::InvalidConfig(format!("{}: unexpected report header", path.display())));
            }
            let mut rows = Vec::new();
            for rec in r.records() {
                let rec = rec?;
                let num = |i: usize| -> Result<f64> {
                    rec[i]
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("bad number `{}` in {}", &rec[i], CSV_HEADER[i])))
                };
                rows.push(MetricsRow {
                    system: rec[0].to_string(),
                    beta: num(1)?,
                    alpha: if rec[2].is_empty() { None } else { Some(num(2)?) },
                    si_sdr_db: num(3)?,
                    sd_snr_db: num(4)?,
                    ssl_feature_mse: num(5)?,
                    n_utterances: rec[6]
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("bad count `{}`", &rec[6])))?,
                });
            }
            rows
        }
    };
    if rows.is_empty() {
        return Err(Error::EmptyReport);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(alpha: Option<f64>) -> MetricsRow {
        MetricsRow {
            system: "ssl_mt_alpha".into(),
            beta: 0.1,
            alpha,
            si_sdr_db: 12.345678901234567,
            sd_snr_db: -1.0 / 3.0,
            ssl_feature_mse: 1.2e-7,
            n_utterances: 50,
        }
    }

    #[test]
    fn csv_layout_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_csv(&[row(Some(1e-4))], &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "system,beta,alpha,si_sdr_db,sd_snr_db,ssl_feature_mse,n_utterances");
        let rows = vec![row(Some(1e-4)), row(None)];
        write_csv(&rows, &p).unwrap();
        assert_eq!(read_report(&p).unwrap(), rows);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        let rows = vec![row(None), row(Some(10.0))];
        write_report(&rows, &p).unwrap();
        assert_eq!(read_report(&p).unwrap(), rows);
    }

    #[test]
    fn empty_report() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(write_csv(&[], &dir.path().join("a.csv")), Err(Error::EmptyReport)));
        assert!(matches!(write_json(&[], &dir.path().join("a.json")), Err(Error::EmptyReport)));
    }
}
