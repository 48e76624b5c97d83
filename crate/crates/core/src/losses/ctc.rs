//! Connectionist temporal classification in the log domain.

use ndarray::Array2;

use crate::error::{Error, Result};

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[derive(Debug, Clone)]
pub struct CtcOutput {
    /// `−ln p(target | input)`.
    pub loss: f64,
    /// Per-frame symbol occupancy `γ_t(k)`; `∂loss/∂log_probs = −γ`.
    pub occupancy: Array2<f64>,
}

/// Forward–backward over `log_probs` of shape `[frames, vocab]`.
pub fn ctc_forward_backward(log_probs: &Array2<f64>, target: &[u32], blank: u32) -> Result<CtcOutput> {
    let (frames, vocab) = log_probs.dim();
    if target.iter().any(|&t| t == blank || t as usize >= vocab) {
        return Err(Error::Vocabulary(format!(
            "target {target:?} has symbols outside 1..{vocab} or the blank"
        )));
    }
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &t in target {
        ext.push(t);
        ext.push(blank);
    }
    let s_len = ext.len();
    let can_skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
    let ninf = f64::NEG_INFINITY;
    let lp = |t: usize, s: usize| log_probs[[t, ext[s] as usize]];

    let mut alpha = Array2::from_elem((frames, s_len), ninf);
    alpha[[0, 0]] = lp(0, 0);
    if s_len > 1 {
        alpha[[0, 1]] = lp(0, 1);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let mut acc = alpha[[t - 1, s]];
            if s >= 1 {
                acc = log_add(acc, alpha[[t - 1, s - 1]]);
            }
            if can_skip(s) {
                acc = log_add(acc, alpha[[t - 1, s - 2]]);
            }
            if acc > ninf {
                alpha[[t, s]] = acc + lp(t, s);
            }
        }
    }
    let last = frames - 1;
    let mut log_p = alpha[[last, s_len - 1]];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[[last, s_len - 2]]);
    }
    if log_p == ninf {
        return Err(Error::Vocabulary(format!(
            "target of length {} cannot be aligned to {frames} frames",
            target.len()
        )));
    }

    let mut beta = Array2::from_elem((frames, s_len), ninf);
    beta[[last, s_len - 1]] = lp(last, s_len - 1);
    if s_len > 1 {
        beta[[last, s_len - 2]] = lp(last, s_len - 2);
    }
    for t in (0..last).rev() {
        for s in 0..s_len {
            let mut acc = beta[[t + 1, s]];
            if s + 1 < s_len {
                acc = log_add(acc, beta[[t + 1, s + 1]]);
            }
            if s + 2 < s_len && can_skip(s + 2) {
                acc = log_add(acc, beta[[t + 1, s + 2]]);
            }
            if acc > ninf {
                beta[[t, s]] = acc + lp(t, s);
            }
        }
    }

    let mut occupancy = Array2::zeros((frames, vocab));
    for t in 0..frames {
        for s in 0..s_len {
            let a = alpha[[t, s]] + beta[[t, s]];
            if a > ninf {
                occupancy[[t, ext[s] as usize]] += (a - lp(t, s) - log_p).exp();
            }
        }
    }
    Ok(CtcOutput {
        loss: -log_p,
        occupancy,
    })
}

/// Frame-wise argmax, repeats merged, blanks dropped.
pub fn greedy_collapse(log_probs: &Array2<f64>, blank: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for row in log_probs.rows() {
        let best = row
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc })
            .0 as u32;
        if Some(best) != prev && best != blank {
            out.push(best);
        }
        prev = Some(best);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_log_probs(frames: usize, vocab: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m: Array2<f64> = Array2::from_shape_fn((frames, vocab), |_| rng.random_range(-2.0..2.0));
        for mut row in m.rows_mut() {
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        m
    }

    fn collapse(path: &[u32], blank: u32) -> Vec<u32> {
        let mut out = Vec::new();
        let mut prev = None;
        for &p in path {
            if Some(p) != prev && p != blank {
                out.push(p);
            }
            prev = Some(p);
        }
        out
    }

    /// Sums the probability of every frame-level path that collapses to the target.
    fn brute_force(lp: &Array2<f64>, target: &[u32]) -> f64 {
        let (frames, vocab) = lp.dim();
        let mut total = 0.0;
        for code in 0..vocab.pow(frames as u32) {
            let mut c = code;
            let path: Vec<u32> = (0..frames)
                .map(|_| {
                    let k = (c % vocab) as u32;
                    c /= vocab;
                    k
                })
                .collect();
            if collapse(&path, 0) == target {
                total += path.iter().enumerate().map(|(t, &k)| lp[[t, k as usize]]).sum::<f64>().exp();
            }
        }
        total
    }

    #[test]
    fn matches_path_enumeration() {
        for (seed, target) in [(1u64, vec![1u32]), (2, vec![1, 2]), (3, vec![2, 2]), (4, vec![1, 2, 1]), (5, vec![])] {
            let lp = random_log_probs(5, 3, seed);
            let out = ctc_forward_backward(&lp, &target, 0).unwrap();
            let p = brute_force(&lp, &target);
            assert!((out.loss + p.ln()).abs() < 1e-10, "target {target:?}");
        }
    }

    #[test]
    fn occupancy_is_log_prob_gradient() {
        let lp = random_log_probs(6, 4, 9);
        let target = [3u32, 1, 1];
        let out = ctc_forward_backward(&lp, &target, 0).unwrap();
        let h = 1e-6;
        for t in 0..6 {
            for k in 0..4 {
                let mut up = lp.clone();
                up[[t, k]] += h;
                let mut dn = lp.clone();
                dn[[t, k]] -= h;
                let fd = (ctc_forward_backward(&up, &target, 0).unwrap().loss
                    - ctc_forward_backward(&dn, &target, 0).unwrap().loss)
                    / (2.0 * h);
                assert!((fd + out.occupancy[[t, k]]).abs() < 1e-7);
            }
        }
        // each frame is occupied exactly once
        for row in out.occupancy.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn infeasible_and_invalid_targets() {
        let lp = random_log_probs(3, 3, 0);
        assert!(ctc_forward_backward(&lp, &[1, 1], 0).is_ok());
        assert!(matches!(ctc_forward_backward(&lp, &[1, 1, 1], 0), Err(Error::Vocabulary(_))));
        assert!(matches!(ctc_forward_backward(&lp, &[3], 0), Err(Error::Vocabulary(_))));
        assert!(matches!(ctc_forward_backward(&lp, &[0], 0), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn greedy_merges_and_drops_blanks() {
        let mut lp = Array2::from_elem((6, 3), -5.0);
        for (t, k) in [1usize, 1, 0, 1, 2, 2].iter().enumerate() {
            lp[[t, *k]] = 0.0;
        }
        assert_eq!(greedy_collapse(&lp, 0), vec![1, 1, 2]);
    }
}
