//! Deterministic random streams and Monte Carlo estimators.
//!
//! Every simulated path owns an independent ChaCha8 stream. The 256-bit key
//! is expanded from `(master_seed, substream)` with SplitMix64, and the path
//! index selects the ChaCha stream id, so draws depend only on the key and
//! never on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Substream reserved for Brownian increments of the forward system.
pub const BROWNIAN_SUBSTREAM: u32 = 0;
/// Substream used by samplers in audits and validators.
pub const AUDIT_SUBSTREAM: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub master_seed: u64,
    pub path_index: u64,
    pub substream: u32,
}

impl StreamKey {
    pub fn new(master_seed: u64, path_index: u64, substream: u32) -> Self {
        Self {
            master_seed,
            path_index,
            substream,
        }
    }

    pub fn brownian(master_seed: u64, path_index: u64) -> Self {
        Self::new(master_seed, path_index, BROWNIAN_SUBSTREAM)
    }

    /// A fresh generator positioned at the start of this key's stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut state =
            self.master_seed ^ (u64::from(self.substream)).wrapping_mul(0xD1B5_4A32_D192_ED03);
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.path_index);
        rng
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Streaming source of scaled Gaussian vectors for one key.
pub struct GaussianStream {
    rng: ChaCha8Rng,
}

impl GaussianStream {
    pub fn new(key: StreamKey) -> Self {
        Self { rng: key.rng() }
    }

    /// Fills `out` with independent `N(0, scale^2)` draws.
    #[inline]
    pub fn fill(&mut self, out: &mut [f64], scale: f64) {
        for v in out.iter_mut() {
            let z: f64 = self.rng.sample(StandardNormal);
            *v = scale * z;
        }
    }

    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }
}

/// `n` i.i.d. `N(0, dt I_m)` vectors reproducible from `key`.
pub fn gaussian_increments(key: StreamKey, n: usize, m: usize, dt: f64) -> Result<Vec<Vec<f64>>> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let mut stream = GaussianStream::new(key);
    let scale = dt.sqrt();
    Ok((0..n)
        .map(|_| {
            let mut v = vec![0.0; m];
            stream.fill(&mut v, scale);
            v
        })
        .collect())
}

/// Componentwise sample mean with standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: Vec<f64>,
    /// `None` when fewer than two samples were given.
    pub stderr: Option<Vec<f64>>,
    pub count: usize,
}

pub fn mean_stderr(samples: &[Vec<f64>]) -> Result<MeanStderr> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("mean_stderr needs at least one sample"))?;
    let dim = first.len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::invalid("samples have inconsistent dimension"));
    }
    let mut mean = Vec::with_capacity(dim);
    let mut stderr = Vec::with_capacity(dim);
    for k in 0..dim {
        let (mu, se) = scalar_mean_stderr(samples.iter().map(|s| s[k]));
        mean.push(mu);
        stderr.push(se);
    }
    let n = samples.len();
    Ok(MeanStderr {
        mean,
        stderr: if n >= 2 { Some(stderr) } else { None },
        count: n,
    })
}

/// Two-pass mean and standard error of a scalar sample; the error is 0 for
/// a single sample (callers that care check the count).
pub fn scalar_mean_stderr<I>(values: I) -> (f64, f64)
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let it = values.into_iter();
    let (n, sum) = it.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = sum / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = it.map(|v| (v - mean) * (v - mean)).sum();
    let var = ss / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Standard error of the difference of two independent estimates.
#[inline]
pub fn pooled_stderr(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_request_gives_empty_array() {
        let v = gaussian_increments(StreamKey::brownian(1, 0), 0, 3, 0.1).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn same_key_same_stream() {
        let k = StreamKey::new(42, 7, 0);
        let a = gaussian_increments(k, 100, 2, 0.01).unwrap();
        let b = gaussian_increments(k, 100, 2, 0.01).unwrap();
        assert_eq!(a, b);
        let c = gaussian_increments(StreamKey::new(42, 8, 0), 100, 2, 0.01).unwrap();
        assert_ne!(a, c);
        let d = gaussian_increments(StreamKey::new(42, 7, 1), 100, 2, 0.01).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn rejects_nonpositive_dt() {
        assert!(gaussian_increments(StreamKey::brownian(0, 0), 3, 1, 0.0).is_err());
    }

    #[test]
    fn mean_stderr_hand_values() {
        let r = mean_stderr(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(r.mean, vec![1.0]);
        assert_eq!(r.stderr, Some(vec![1.0]));

        let single = mean_stderr(&[vec![3.5, -1.0]]).unwrap();
        assert_eq!(single.mean, vec![3.5, -1.0]);
        assert!(single.stderr.is_none());

        assert!(matches!(mean_stderr(&[]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn stderr_of_standard_normal_sample() {
        let draws = gaussian_increments(StreamKey::brownian(11, 3), 10_000, 1, 1.0).unwrap();
        let r = mean_stderr(&draws).unwrap();
        let se = r.stderr.unwrap()[0];
        assert!((se - 0.01).abs() < 0.002, "stderr {se}");
    }
}
