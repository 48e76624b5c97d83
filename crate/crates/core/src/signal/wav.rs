use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WavEncoding {
    Pcm16,
    #[default]
    Float32,
}

fn hound_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::UnsupportedFormat(format!("{}: {other}", path.display())),
    }
}

/// Reads a mono RIFF file holding 16-bit PCM or 32-bit float samples.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| hound_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {} channels, only mono is supported",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| hound_err(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| hound_err(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: {bits}-bit {fmt:?}",
                path.display()
            )))
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate(),
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => hound::SampleFormat::Int,
            WavEncoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| hound_err(path, e))?;
    for &s in wave.samples() {
        let r = match encoding {
            WavEncoding::Pcm16 => {
                writer.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)
            }
            WavEncoding::Float32 => writer.write_sample(s as f32),
        };
        r.map_err(|e| hound_err(path, e))?;
    }
    writer.finalize().map_err(|e| hound_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Waveform {
        let s: Vec<f64> = (0..500).map(|i| ((i as f64) * 0.37).sin() * 0.9).collect();
        Waveform::new(s, 16000).unwrap()
    }

    #[test]
    fn float32_round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let w = Waveform::from_f32(&ramp().to_f32(), 22050).unwrap();
        write_wav(&p, &w, WavEncoding::Float32).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r, w);
        assert_eq!(r.sample_rate(), 22050);
    }

    #[test]
    fn pcm16_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.wav");
        let mut s = ramp().into_samples();
        s.push(1.0);
        s.push(-1.0);
        let w = Waveform::new(s, 16000).unwrap();
        write_wav(&p, &w, WavEncoding::Pcm16).unwrap();
        let r = read_wav(&p).unwrap();
        let max_err = r
            .samples()
            .iter()
            .zip(w.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 1.0 / 32768.0, "{max_err}");
    }

    #[test]
    fn stereo_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for _ in 0..8 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        assert!(matches!(read_wav(&p), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            read_wav("/nonexistent/definitely/missing.wav"),
            Err(Error::Io { .. })
        ));
    }
}
