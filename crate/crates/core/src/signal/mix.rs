use rand::Rng;

use super::{energy, Waveform};
use crate::error::{Error, Result};

/// Paired clean, scaled-noise and noisy signals.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureExample {
    pub id: String,
    pub clean: Waveform,
    pub noise: Waveform,
    pub noisy: Waveform,
    pub snr_db: f64,
}

/// `10·log10(‖clean‖² / ‖noise‖²)` over the full utterance.
pub fn measure_snr(clean: &Waveform, noise: &Waveform) -> Result<f64> {
    if clean.len() != noise.len() {
        return Err(Error::LengthMismatch(clean.len(), noise.len()));
    }
    let ec = clean.energy();
    let en = noise.energy();
    if ec == 0.0 {
        return Err(Error::ZeroEnergySignal("clean"));
    }
    if en == 0.0 {
        return Err(Error::ZeroEnergySignal("noise"));
    }
    Ok(10.0 * (ec / en).log10())
}

/// Selects a clean-length noise segment. Longer noise is cut at a random
/// offset; shorter noise is tiled starting from a random phase.
fn noise_segment<R: Rng + ?Sized>(noise: &[f64], len: usize, rng: &mut R) -> Vec<f64> {
    use std::cmp::Ordering;
    match noise.len().cmp(&len) {
        Ordering::Equal => noise.to_vec(),
        Ordering::Greater => {
            let start = rng.random_range(0..=noise.len() - len);
            noise[start..start + len].to_vec()
        }
        Ordering::Less => {
            let start = rng.random_range(0..noise.len());
            noise.iter().cycle().skip(start).take(len).copied().collect()
        }
    }
}

/// Scales `noise` so that the clean-to-noise energy ratio equals `snr_db`
/// and adds it to `clean`.
pub fn mix_at_snr<R: Rng + ?Sized>(
    clean: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    rng: &mut R,
    id: impl Into<String>,
) -> Result<MixtureExample> {
    if clean.sample_rate() != noise.sample_rate() {
        return Err(Error::SampleRateMismatch(
            clean.sample_rate(),
            noise.sample_rate(),
        ));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidConfig(format!("target SNR {snr_db} is not finite")));
    }
    let ec = clean.energy();
    if ec == 0.0 {
        return Err(Error::ZeroEnergySignal("clean"));
    }
    let segment = noise_segment(noise.samples(), clean.len(), rng);
    let en = energy(&segment);
    if en == 0.0 {
        return Err(Error::ZeroEnergySignal("noise segment"));
    }
    let gain = (ec / (en * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled: Vec<f64> = segment.iter().map(|n| n * gain).collect();
    let noisy: Vec<f64> = clean
        .samples()
        .iter()
        .zip(&scaled)
        .map(|(c, n)| c + n)
        .collect();
    let sr = clean.sample_rate();
    Ok(MixtureExample {
        id: id.into(),
        clean: clean.clone(),
        noise: Waveform::new(scaled, sr)?,
        noisy: Waveform::new(noisy, sr)?,
        snr_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn wave(s: &[f64]) -> Waveform {
        Waveform::new(s.to_vec(), 16000).unwrap()
    }

    #[test]
    fn measure_snr_examples() {
        assert_eq!(measure_snr(&wave(&[1.0, 0.0]), &wave(&[1.0, 0.0])).unwrap(), 0.0);
        let s = measure_snr(&wave(&[1.0, 0.0]), &wave(&[0.1, 0.0])).unwrap();
        assert!((s - 20.0).abs() < 1e-12);
        assert!(matches!(
            measure_snr(&wave(&[1.0, 0.0]), &wave(&[0.0, 0.0])),
            Err(Error::ZeroEnergySignal(_))
        ));
    }

    #[test]
    fn zero_db_equal_energy_keeps_noise() {
        let clean = wave(&[1.0, -1.0, 0.5, 0.0]);
        let noise = wave(&[0.0, 1.0, -1.0, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = mix_at_snr(&clean, &noise, 0.0, &mut rng, "a").unwrap();
        for (a, b) in m.noise.samples().iter().zip(noise.samples()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn twenty_db_scales_unit_noise_by_tenth() {
        let clean = wave(&[1.0, 0.0]);
        let noise = wave(&[0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = mix_at_snr(&clean, &noise, 20.0, &mut rng, "a").unwrap();
        assert!((m.noise.samples()[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = mix_at_snr(&wave(&[1.0, 0.5]), &wave(&[0.0, 0.0]), 5.0, &mut rng, "a");
        assert!(matches!(r, Err(Error::ZeroEnergySignal(_))));
        let r = mix_at_snr(&wave(&[0.0, 0.0]), &wave(&[1.0, 0.0]), 5.0, &mut rng, "a");
        assert!(matches!(r, Err(Error::ZeroEnergySignal(_))));
    }

    #[test]
    fn sample_rate_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Waveform::new(vec![1.0], 16000).unwrap();
        let b = Waveform::new(vec![1.0], 8000).unwrap();
        assert!(matches!(
            mix_at_snr(&a, &b, 0.0, &mut rng, "a"),
            Err(Error::SampleRateMismatch(16000, 8000))
        ));
    }

    #[test]
    fn short_noise_tiled_long_noise_cut() {
        let clean = wave(&[1.0; 10]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let short = wave(&[1.0, 2.0, 3.0]);
        let m = mix_at_snr(&clean, &short, 0.0, &mut rng, "s").unwrap();
        assert_eq!(m.noise.len(), 10);
        // tiled: period-3 pattern
        let n = m.noise.samples();
        for i in 3..10 {
            assert!((n[i] - n[i - 3]).abs() < 1e-12);
        }
        let long: Vec<f64> = (0..50).map(|i| (i as f64 + 1.0) / 50.0).collect();
        let m = mix_at_snr(&clean, &wave(&long), 0.0, &mut rng, "l").unwrap();
        assert_eq!(m.noise.len(), 10);
    }

    proptest! {
        #[test]
        fn mixing_hits_target_snr(
            seed in 0u64..1000,
            snr in -30.0f64..30.0,
            clean_len in 16usize..200,
            noise_len in 8usize..400,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let clean: Vec<f64> = (0..clean_len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let noise: Vec<f64> = (0..noise_len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = mix_at_snr(&wave(&clean), &wave(&noise), snr, &mut rng, "p").unwrap();
            let measured = measure_snr(&m.clean, &m.noise).unwrap();
            prop_assert!((measured - snr).abs() < 0.01);
            for ((y, c), n) in m.noisy.samples().iter().zip(m.clean.samples()).zip(m.noise.samples()) {
                prop_assert!((y - c - n).abs() <= 1e-9);
            }
        }
    }
}
