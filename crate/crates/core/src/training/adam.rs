use std::collections::BTreeMap;

use candle_core::{backprop::GradStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::InvalidConfig("adam: betas must be in [0, 1) and eps positive".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction and optional global-norm gradient clipping.
#[derive(Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn from_moments(cfg: AdamConfig, step: u64, m: BTreeMap<String, Tensor>, v: BTreeMap<String, Tensor>) -> Self {
        Self { cfg, step, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&BTreeMap<String, Tensor>, &BTreeMap<String, Tensor>) {
        (&self.m, &self.v)
    }

    /// Applies one update and returns the gradient norm before clipping.
    /// Parameters without a gradient are left untouched.
    pub fn step(&mut self, params: &BTreeMap<String, Var>, grads: &GradStore, lr: f64, clip: Option<f64>) -> Result<f64> {
        let mut sq = 0.0;
        let mut present = Vec::new();
        for (name, var) in params {
            if let Some(g) = grads.get(var.as_tensor()) {
                sq += g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
                present.push((name, var, g));
            }
        }
        let norm = sq.sqrt();
        let scale = match clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for (name, var, g) in present {
            let g = if scale == 1.0 { g.detach() } else { (g.detach() * scale)? };
            let m = match self.m.get(name) {
                Some(m) => ((m * b1)? + (&g * (1.0 - b1))?)?,
                None => (&g * (1.0 - b1))?,
            };
            let v = match self.v.get(name) {
                Some(v) => ((v * b2)? + (g.sqr()? * (1.0 - b2))?)?,
                None => (g.sqr()? * (1.0 - b2))?,
            };
            let denom = ((&v / bc2)?.sqrt()? + self.cfg.eps)?;
            let update = ((&m / bc1)? / denom)?;
            var.set(&(var.as_tensor() - (update * lr)?)?)?;
            self.m.insert(name.clone(), m);
            self.v.insert(name.clone(), v);
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DEVICE;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let var = Var::new(&[1.0f64, -2.0, 0.5], &DEVICE).unwrap();
        let params = BTreeMap::from([("w".to_string(), var.clone())]);
        let loss = (var.as_tensor() * Tensor::new(&[3.0f64, -1.0, 0.0], &DEVICE).unwrap())
            .unwrap()
            .sum_all()
            .unwrap();
        let grads = loss.backward().unwrap();
        let mut opt = Adam::new(AdamConfig::default());
        let norm = opt.step(&params, &grads, 0.1, None).unwrap();
        assert!((norm - 10f64.sqrt()).abs() < 1e-12);
        let v = var.as_tensor().to_vec1::<f64>().unwrap();
        assert!((v[0] - 0.9).abs() < 1e-6);
        assert!((v[1] + 1.9).abs() < 1e-6);
        assert_eq!(v[2], 0.5);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let var = Var::new(&[4.0f64, -3.0], &DEVICE).unwrap();
        let params = BTreeMap::from([("w".to_string(), var.clone())]);
        let mut opt = Adam::new(AdamConfig::default());
        for _ in 0..500 {
            let loss = var.as_tensor().sqr().unwrap().sum_all().unwrap();
            let grads = loss.backward().unwrap();
            opt.step(&params, &grads, 0.05, Some(5.0)).unwrap();
        }
        let v = var.as_tensor().to_vec1::<f64>().unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-2), "{v:?}");
        assert_eq!(opt.step_count(), 500);
    }
}
