//! Dense vector/matrix aliases, keyed deterministic Gaussian sampling, a
//! finite-difference gradient oracle, and spectral norms.
//!
//! All operations here are pure; parallel use requires no synchronization.
//! Randomness is derived from [`RngKey`] values, never from shared state.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Error;
use crate::Result;

/// `log(2 pi)`, shared by the Gaussian log-density computations.
pub const LN_2PI: f64 = 1.8378770664093453;

/// Dense column vector of `f64`.
pub type Vec64 = DVector<f64>;
/// Dense matrix of `f64`.
pub type Mat64 = DMatrix<f64>;

/// A splittable key for deterministic random number generation.
///
/// A key is a 64-bit state derived from a seed by mixing in stream labels
/// (iteration index, sample index, purpose tag, ...). The same
/// `(seed, labels)` always produces the same draws, independent of
/// evaluation order or thread count, because every consumer derives its own
/// child key instead of advancing a shared stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngKey {
    state: u64,
}

/// splitmix64 finalizer: a cheap, well-distributed 64-bit mixer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngKey {
    /// Root key for a run.
    pub fn new(seed: u64) -> Self {
        RngKey { state: mix64(seed) }
    }

    /// Derive a child key by mixing in a numeric label.
    pub fn derive(self, label: u64) -> Self {
        RngKey {
            state: mix64(self.state ^ mix64(label.wrapping_add(0xa076_1d64_78bd_642f))),
        }
    }

    /// Derive a child key from a purpose tag (FNV-1a over the bytes).
    pub fn derive_tag(self, tag: &str) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in tag.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        RngKey {
            state: mix64(self.state ^ h),
        }
    }

    /// Instantiate the ChaCha stream for this key.
    pub fn rng(self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        let mut s = self.state;
        for chunk in seed.chunks_mut(8) {
            s = mix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// Draw `dim` i.i.d. standard normal variates, reproducible from `key`.
pub fn gauss_sample(key: RngKey, dim: usize) -> Vec64 {
    assert!(dim >= 1, "gauss_sample requires dim >= 1");
    let mut rng = key.rng();
    Vec64::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(&mut rng)))
}

/// Draw a uniform in `[0, 1)`, reproducible from `key`.
pub fn uniform_sample(key: RngKey) -> f64 {
    use rand::Rng;
    key.rng().gen::<f64>()
}

/// Central-difference gradient of a scalar function.
///
/// The step for coordinate `i` is `h * max(1, |x_i|)` (the standard f64
/// scaling); pass `None` to use the default `h = 1e-5`. Errors if the
/// function returns a non-finite value at any probe point.
pub fn finite_diff_grad<F>(f: F, x: &Vec64, h: Option<f64>) -> Result<Vec64>
where
    F: Fn(&Vec64) -> f64,
{
    let h0 = h.unwrap_or(1e-5);
    if h0 <= 0.0 {
        return Err(Error::invalid("h", "finite-difference step must be > 0"));
    }
    let mut grad = Vec64::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let hi = h0 * x[i].abs().max(1.0);
        probe[i] = x[i] + hi;
        let fp = f(&probe);
        probe[i] = x[i] - hi;
        let fm = f(&probe);
        probe[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite {
                context: "finite_diff_grad".into(),
                at: Some(format!("coordinate {i} (f+ = {fp}, f- = {fm})")),
            });
        }
        grad[i] = (fp - fm) / (2.0 * hi);
    }
    Ok(grad)
}

/// Spectral norm (largest singular value) by power iteration on `MᵀM`.
///
/// Runs at most 100 iterations, stopping early once the Rayleigh estimate
/// changes by a relative factor below 1e-12.
pub fn spectral_norm(m: &Mat64) -> f64 {
    if m.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    let n = m.ncols();
    // Deterministic start: ones plus a small ramp so we are not orthogonal
    // to the leading singular vector for sign-symmetric matrices.
    let mut v = Vec64::from_iterator(n, (0..n).map(|i| 1.0 + (i as f64) * 1e-3));
    v /= v.norm();
    let mut sigma = 0.0_f64;
    for _ in 0..100 {
        let w = m * &v;
        let u = m.transpose() * w;
        let nu = u.norm();
        if nu == 0.0 {
            return 0.0;
        }
        let new_sigma = nu.sqrt();
        let rel = (new_sigma - sigma).abs() / new_sigma.max(f64::MIN_POSITIVE);
        v = u / nu;
        sigma = new_sigma;
        if rel < 1e-12 {
            break;
        }
    }
    sigma
}

/// Numerically stable `log(mean(exp(v)))`.
pub fn log_mean_exp(vals: &[f64]) -> Result<f64> {
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights);
    }
    let sum: f64 = vals.iter().map(|v| (v - max).exp()).sum();
    Ok(max + (sum / vals.len() as f64).ln())
}
