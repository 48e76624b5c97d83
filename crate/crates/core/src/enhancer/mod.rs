//! Time-domain enhancement network and observation-adding post-processing.

mod config;
mod model;

pub use config::{ConvTasNetConfig, MaskActivation};
pub use model::{EnhancerModel, Mode};

use crate::error::{Error, Result};
use crate::signal::Waveform;

/// Blends the observation back into the enhanced signal:
/// `x̃ = β·y + (1 − β)·x̂`.
pub fn observation_add(noisy: &Waveform, enhanced: &Waveform, beta: f64) -> Result<Waveform> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::RatioOutOfRange(beta));
    }
    noisy.check_compatible(enhanced)?;
    let out = if beta == 0.0 {
        enhanced.samples().to_vec()
    } else if beta == 1.0 {
        noisy.samples().to_vec()
    } else {
        noisy
            .samples()
            .iter()
            .zip(enhanced.samples())
            .map(|(y, x)| beta * y + (1.0 - beta) * x)
            .collect()
    };
    Waveform::new(out, noisy.sample_rate())
}

/// Initialize a seeded enhancer.
pub fn init_enhancer(config: &ConvTasNetConfig, seed: u64) -> Result<EnhancerModel> {
    EnhancerModel::init(config, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(s: &[f64]) -> Waveform {
        Waveform::new(s.to_vec(), 16000).unwrap()
    }

    #[test]
    fn endpoints_are_exact() {
        let y = w(&[0.3, -0.7, 0.11]);
        let x = w(&[0.1, 0.2, -0.9]);
        assert_eq!(observation_add(&y, &x, 0.0).unwrap(), x);
        assert_eq!(observation_add(&y, &x, 1.0).unwrap(), y);
        let one = observation_add(&w(&[1.0]), &w(&[0.0]), 0.1).unwrap();
        assert!((one.samples()[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let y = w(&[0.3, -0.7]);
        assert!(matches!(observation_add(&y, &y, 1.5), Err(Error::RatioOutOfRange(_))));
        assert!(matches!(observation_add(&y, &y, -0.1), Err(Error::RatioOutOfRange(_))));
        assert!(matches!(
            observation_add(&y, &w(&[0.1]), 0.5),
            Err(Error::LengthMismatch(2, 1))
        ));
    }

    proptest! {
        #[test]
        fn affine_interpolation(
            pairs in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..64),
            beta in 0.0f64..=1.0,
        ) {
            let (ys, xs): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let out = observation_add(&w(&ys), &w(&xs), beta).unwrap();
            for ((o, y), x) in out.samples().iter().zip(&ys).zip(&xs) {
                prop_assert!((o - beta * y - (1.0 - beta) * x).abs() < 1e-15);
            }
        }
    }
}
