use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Plateau learning-rate schedule state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub current_lr: f64,
    /// `None` until the first dev loss is seen.
    pub best_dev_loss: Option<f64>,
    pub epochs_since_improvement: usize,
    pub cuts: usize,
}

impl ScheduleState {
    pub fn new(initial_lr: f64) -> Self {
        Self {
            current_lr: initial_lr,
            best_dev_loss: None,
            epochs_since_improvement: 0,
            cuts: 0,
        }
    }
}

/// One epoch of the plateau rule: a strict improvement resets the counter,
/// otherwise the counter grows and the rate is multiplied by `factor` as soon
/// as it reaches `patience`.
pub fn lr_schedule_step(state: &ScheduleState, dev_loss: f64, factor: f64, patience: usize) -> Result<ScheduleState> {
    if !dev_loss.is_finite() {
        return Err(Error::NonFiniteDevLoss(dev_loss));
    }
    let mut next = state.clone();
    if state.best_dev_loss.is_none_or(|best| dev_loss < best) {
        next.best_dev_loss = Some(dev_loss);
        next.epochs_since_improvement = 0;
        return Ok(next);
    }
    next.epochs_since_improvement += 1;
    if next.epochs_since_improvement >= patience {
        next.current_lr *= factor;
        next.cuts += 1;
        next.epochs_since_improvement = 0;
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(losses: &[f64]) -> Vec<f64> {
        let mut s = ScheduleState::new(5e-4);
        losses
            .iter()
            .map(|&l| {
                s = lr_schedule_step(&s, l, 0.75, 2).unwrap();
                s.current_lr
            })
            .collect()
    }

    #[test]
    fn improvement_keeps_rate() {
        assert_eq!(run(&[3.0, 2.9]), vec![5e-4, 5e-4]);
    }

    #[test]
    fn two_stale_epochs_cut_once() {
        let lrs = run(&[3.0, 3.0, 3.1]);
        assert_eq!(lrs[..2], [5e-4, 5e-4]);
        assert!((lrs[2] - 3.75e-4).abs() < 1e-18);
    }

    #[test]
    fn counter_resets_on_improvement_and_after_cut() {
        // 3.1 stale, 2.8 resets, 2.9 and 3.0 are two consecutive stale epochs
        let lrs = run(&[3.0, 3.1, 2.8, 2.9, 3.0]);
        assert_eq!(lrs[..4], [5e-4; 4]);
        assert!((lrs[4] - 3.75e-4).abs() < 1e-18);
        let lrs = run(&[3.0, 3.1, 3.2, 3.3, 3.4]);
        assert!((lrs[4] - 5e-4 * 0.75 * 0.75).abs() < 1e-18);
        assert!((lrs[3] - 3.75e-4).abs() < 1e-18);
    }

    #[test]
    fn rate_is_geometric_in_cuts() {
        let mut s = ScheduleState::new(1e-3);
        let mut prev = s.current_lr;
        for l in [1.0, 2.0, 0.5, 0.7, 0.6, 0.9, 0.4, 0.45, 0.41, 0.5] {
            s = lr_schedule_step(&s, l, 0.75, 2).unwrap();
            assert!(s.current_lr <= prev);
            assert!((s.current_lr - 1e-3 * 0.75f64.powi(s.cuts as i32)).abs() < 1e-18);
            prev = s.current_lr;
        }
    }

    #[test]
    fn non_finite_dev_loss() {
        let s = ScheduleState::new(1e-3);
        assert!(matches!(lr_schedule_step(&s, f64::NAN, 0.75, 2), Err(Error::NonFiniteDevLoss(_))));
        assert!(matches!(lr_schedule_step(&s, f64::INFINITY, 0.75, 2), Err(Error::NonFiniteDevLoss(_))));
    }
}
