use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

use crate::error::{Error, Result};

/// Runs an external per-utterance scorer. The command receives one
/// `ref_path<TAB>est_path` line per pair on stdin and must print one
/// `id<TAB>score` line per pair on stdout.
pub fn run_external_scorer(command: &[String], pairs: &[(PathBuf, PathBuf)]) -> Result<Vec<(String, f64)>> {
    let Some((program, args)) = command.split_first() else {
        return Err(Error::Scorer("empty scorer command".into()));
    };
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::Scorer(format!("cannot start {program}: {e}")))?;
    let mut input = String::new();
    for (r, e) in pairs {
        input.push_str(&format!("{}\t{}\n", r.display(), e.display()));
    }
    {
        let mut stdin = child.stdin.take().expect("piped stdin");
        stdin
            .write_all(input.as_bytes())
            .map_err(|e| Error::Scorer(format!("writing to scorer: {e}")))?;
    }
    let out = child
        .wait_with_output()
        .map_err(|e| Error::Scorer(format!("waiting for scorer: {e}")))?;
    if !out.status.success() {
        return Err(Error::Scorer(format!(
            "scorer exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    let text = String::from_utf8_lossy(&out.stdout);
    let scores = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (id, score) = l
                .split_once('\t')
                .ok_or_else(|| Error::Scorer(format!("malformed scorer line `{l}`")))?;
            let score = score
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Scorer(format!("non-numeric score in `{l}`")))?;
            Ok((id.to_string(), score))
        })
        .collect::<Result<Vec<_>>>()?;
    if scores.len() != pairs.len() {
        return Err(Error::Scorer(format!("expected {} scores, got {}", pairs.len(), scores.len())));
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_protocol() {
        let cmd: Vec<String> = ["sh", "-c", "awk -F'\\t' '{print $2 \"\\t\" length($1)}'"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let pairs = vec![(PathBuf::from("a.wav"), PathBuf::from("x.wav")), (PathBuf::from("bb.wav"), PathBuf::from("y.wav"))];
        let scores = run_external_scorer(&cmd, &pairs).unwrap();
        assert_eq!(scores, vec![("x.wav".to_string(), 5.0), ("y.wav".to_string(), 6.0)]);
    }

    #[test]
    fn failures_are_reported() {
        let fail: Vec<String> = vec!["sh".into(), "-c".into(), "exit 3".into()];
        assert!(matches!(run_external_scorer(&fail, &[]), Err(Error::Scorer(_))));
        let garbage: Vec<String> = vec!["sh".into(), "-c".into(), "echo nonsense".into()];
        let pairs = vec![(PathBuf::from("a"), PathBuf::from("b"))];
        assert!(matches!(run_external_scorer(&garbage, &pairs), Err(Error::Scorer(_))));
        assert!(matches!(run_external_scorer(&[], &pairs), Err(Error::Scorer(_))));
    }
}
