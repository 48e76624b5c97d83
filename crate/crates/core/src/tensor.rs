//! Small tensor helpers shared by the feature extractors, encoders and the
//! enhancement network. Batched signals are `[batch, time]` and framed
//! signals `[batch, frames, channels]`.

use candle_core::{DType, Device, Tensor};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::signal::Waveform;

pub const DEVICE: Device = Device::Cpu;

/// Stacks equal-length waveforms into a `[batch, time]` tensor.
pub fn batch_tensor(waves: &[&Waveform], dtype: DType) -> Result<Tensor> {
    let Some(first) = waves.first() else {
        return Err(Error::EmptyDataset("empty batch"));
    };
    let len = first.len();
    let mut data = Vec::with_capacity(len * waves.len());
    for w in waves {
        if w.len() != len {
            return Err(Error::LengthMismatch(len, w.len()));
        }
        data.extend_from_slice(w.samples());
    }
    Ok(Tensor::from_vec(data, (waves.len(), len), &DEVICE)?.to_dtype(dtype)?)
}

pub fn wave_tensor(wave: &Waveform, dtype: DType) -> Result<Tensor> {
    batch_tensor(&[wave], dtype)
}

/// `[batch, time]` → `[batch, frames, win]` without padding.
pub fn frames(x: &Tensor, win: usize, hop: usize) -> Result<Tensor> {
    let (batch, len) = x.dims2()?;
    let n = crate::features::frame_count(len, win, hop)?;
    if hop == win {
        return Ok(x.narrow(1, 0, n * win)?.reshape((batch, n, win))?);
    }
    let idx: Vec<u32> = (0..n)
        .flat_map(|f| (0..win).map(move |k| (f * hop + k) as u32))
        .collect();
    let idx = Tensor::from_vec(idx, n * win, &DEVICE)?;
    Ok(x.index_select(&idx, 1)?.reshape((batch, n, win))?)
}

/// Logistic function through `tanh`, which keeps the backward pass inside
/// candle's built-in ops.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

pub fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    let d = x.rank() - 1;
    let lse = x.log_sum_exp(d)?.unsqueeze(d)?;
    Ok(x.broadcast_sub(&lse)?)
}

/// Matrix product of `[batch, n, k]` with a shared `[k, m]` weight.
pub fn batched_linear(x: &Tensor, weight: &Tensor) -> Result<Tensor> {
    let (b, n, k) = x.dims3()?;
    let m = weight.dim(1)?;
    Ok(x.reshape((b * n, k))?.matmul(weight)?.reshape((b, n, m))?)
}

/// SHA-256 over the little-endian bytes of a sequence of named buffers.
pub fn checksum<I>(buffers: I) -> String
where
    I: IntoIterator<Item = (String, Vec<f64>)>,
{
    let mut h = Sha256::new();
    for (name, values) in buffers {
        h.update(name.as_bytes());
        h.update((values.len() as u64).to_le_bytes());
        for v in values {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn tensor_values(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn framing_matches_manual_indexing() {
        let x = Tensor::arange(0f64, 10.0, &DEVICE).unwrap().reshape((1, 10)).unwrap();
        let f = frames(&x, 4, 3).unwrap();
        assert_eq!(f.dims(), &[1, 3, 4]);
        let v = f.to_vec3::<f64>().unwrap();
        assert_eq!(v[0][2], vec![6.0, 7.0, 8.0, 9.0]);
        let g = frames(&x, 5, 5).unwrap();
        assert_eq!(g.to_vec3::<f64>().unwrap()[0][1], vec![5.0, 6.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn sigmoid_matches_definition() {
        let x = Tensor::new(&[-3.0f64, 0.0, 2.5], &DEVICE).unwrap();
        let s = sigmoid(&x).unwrap().to_vec1::<f64>().unwrap();
        for (a, b) in s.iter().zip([-3.0f64, 0.0, 2.5]) {
            assert!((a - 1.0 / (1.0 + (-b).exp())).abs() < 1e-14);
        }
    }
}
