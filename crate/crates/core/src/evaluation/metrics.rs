use crate::error::{Error, Result};
use crate::losses::SnrNumerator;
use crate::signal::{energy, Waveform};

/// Metric values are clamped to `±METRIC_CAP_DB`.
pub const METRIC_CAP_DB: f64 = 60.0;

fn ratio_db(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        return METRIC_CAP_DB;
    }
    if num == 0.0 {
        return -METRIC_CAP_DB;
    }
    (10.0 * (num / den).log10()).clamp(-METRIC_CAP_DB, METRIC_CAP_DB)
}

/// Scale-invariant SDR in dB.
pub fn si_sdr(est: &Waveform, reference: &Waveform) -> Result<f64> {
    est.check_compatible(reference)?;
    let x = reference.samples();
    let xx = energy(x);
    if xx == 0.0 {
        return Err(Error::ZeroReference);
    }
    let dot: f64 = est.samples().iter().zip(x).map(|(a, b)| a * b).sum();
    let scale = dot / xx;
    let (mut s2, mut e2) = (0.0, 0.0);
    for (e, r) in est.samples().iter().zip(x) {
        let s = scale * r;
        s2 += s * s;
        e2 += (e - s) * (e - s);
    }
    Ok(ratio_db(s2, e2))
}

/// Scale-dependent SNR in dB, using the same numerator convention as the
/// SNR loss.
pub fn sd_snr(est: &Waveform, reference: &Waveform, numerator: SnrNumerator) -> Result<f64> {
    est.check_compatible(reference)?;
    let x = reference.samples();
    if energy(x) == 0.0 {
        return Err(Error::ZeroReference);
    }
    let num = match numerator {
        SnrNumerator::Estimate => energy(est.samples()),
        SnrNumerator::Reference => energy(x),
    };
    let err: f64 = est.samples().iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(ratio_db(num, err))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(v: &[f64]) -> Waveform {
        Waveform::new(v.to_vec(), 16000).unwrap()
    }

    #[test]
    fn projection_arithmetic() {
        assert!((si_sdr(&w(&[1.0, 1.0]), &w(&[1.0, 0.0])).unwrap()).abs() < 1e-12);
        let x = w(&[0.3, -0.2, 0.9, 0.1]);
        assert_eq!(si_sdr(&x.scaled(2.0), &x).unwrap(), METRIC_CAP_DB);
        assert!(matches!(si_sdr(&x, &w(&[0.0; 4])), Err(Error::ZeroReference)));
        assert!(matches!(si_sdr(&x, &w(&[1.0])), Err(Error::LengthMismatch(4, 1))));
    }

    #[test]
    fn invariant_to_estimate_scale() {
        let x = w(&[1.0, 2.0, -1.0, 0.5]);
        // orthogonal to x
        let e = [2.0, -1.0, 0.0, 0.0];
        let est: Vec<f64> = x.samples().iter().zip(e).map(|(a, b)| a + 0.3 * b).collect();
        let base = si_sdr(&w(&est), &x).unwrap();
        for c in [0.5, 2.0, 10.0] {
            assert!((si_sdr(&w(&est).scaled(c), &x).unwrap() - base).abs() < 1e-9);
        }
    }

    #[test]
    fn sd_snr_conventions() {
        let x = w(&[1.0, 0.0, 0.0, 0.0]);
        let e = w(&[0.5, 0.0, 0.0, 0.0]);
        assert!(sd_snr(&e, &x, SnrNumerator::Estimate).unwrap().abs() < 1e-12);
        assert!((sd_snr(&e, &x, SnrNumerator::Reference).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-12);
        assert_eq!(sd_snr(&x, &x, SnrNumerator::Estimate).unwrap(), METRIC_CAP_DB);
    }
}
