//! Counter-based random numbers keyed by `(seed, purpose, path_index, step)`.
//!
//! The generator is ChaCha8 in counter mode: the 256-bit key is derived from
//! `(seed, purpose)` with SplitMix64, the ChaCha stream id is the path index and
//! the word position is `step · stride`. Any draw can therefore be regenerated
//! without replaying earlier ones, and results do not depend on which worker
//! simulates which path. Normals use the Box–Muller transform on pairs of
//! 53-bit uniforms, so the number of words per step is fixed.

use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Name of the generator, recorded in reports.
pub const GENERATOR: &str = "ChaCha8 counter mode, key = SplitMix64(seed, purpose), stream = path index, word = step * stride";

/// Independent families of draws for one path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Brownian increments.
    Noise = 1,
    /// Uniforms for Brownian-bridge boundary-crossing detection.
    Crossing = 2,
    /// Initial points drawn from an initial distribution.
    Initial = 3,
}

/// Identifies one path of one ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PathKey {
    pub seed: u64,
    pub path_index: u64,
}

impl PathKey {
    pub fn new(seed: u64, path_index: u64) -> Self {
        Self { seed, path_index }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_key(seed: u64, purpose: Purpose) -> [u8; 32] {
    let mut state = seed ^ ((purpose as u64) << 56) ^ 0x5E_ED0F_F10Fu64;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

#[inline]
fn unit_open(bits: u64) -> f64 {
    // (0, 1]: safe for ln.
    ((bits >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
}

/// Random access into one `(seed, purpose, path)` stream.
pub struct StepStream {
    rng: ChaCha8Rng,
    stride: u128,
}

impl StepStream {
    /// `per_step` is the number of standard normals (or uniforms) drawn per step.
    pub fn new(key: PathKey, purpose: Purpose, per_step: usize) -> Self {
        let mut rng = ChaCha8Rng::from_seed(derive_key(key.seed, purpose));
        rng.set_stream(key.path_index);
        // Box–Muller consumes two u64 (four u32 words) per pair of normals.
        let pairs = per_step.div_ceil(2).max(1) as u128;
        Self { rng, stride: 4 * pairs }
    }

    /// Standard normals of step `step`, written into `out`.
    pub fn normals(&mut self, step: usize, out: &mut [f64]) {
        self.rng.set_word_pos(step as u128 * self.stride);
        let mut i = 0;
        while i < out.len() {
            let u1 = unit_open(self.rng.next_u64());
            let u2 = unit_open(self.rng.next_u64());
            let r = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
            out[i] = r * c;
            if i + 1 < out.len() {
                out[i + 1] = r * s;
            }
            i += 2;
        }
    }

    /// One uniform in `(0, 1]` for step `step`.
    pub fn uniform(&mut self, step: usize) -> f64 {
        self.rng.set_word_pos(step as u128 * self.stride);
        unit_open(self.rng.next_u64())
    }
}

/// Brownian increments `dB[k] ~ N(0, Δ·I_d)` for `k = 0..steps`.
pub fn brownian_increments(key: PathKey, dim: usize, steps: usize, dt: f64) -> Vec<DVector<f64>> {
    let mut stream = StepStream::new(key, Purpose::Noise, dim);
    let sd = dt.sqrt();
    let mut buf = vec![0.0; dim];
    (0..steps)
        .map(|k| {
            stream.normals(k, &mut buf);
            DVector::from_iterator(dim, buf.iter().map(|z| z * sd))
        })
        .collect()
}

/// Crossing uniforms for `k = 0..steps`.
pub fn crossing_uniforms(key: PathKey, steps: usize) -> Vec<f64> {
    let mut stream = StepStream::new(key, Purpose::Crossing, 1);
    (0..steps).map(|k| stream.uniform(k)).collect()
}

/// A draw from `N(mean, var·I)` for the initial point of a path.
pub fn gaussian_point(key: PathKey, mean: &DVector<f64>, var: f64) -> DVector<f64> {
    let mut stream = StepStream::new(key, Purpose::Initial, mean.len());
    let mut buf = vec![0.0; mean.len()];
    stream.normals(0, &mut buf);
    let sd = var.sqrt();
    DVector::from_iterator(mean.len(), mean.iter().zip(&buf).map(|(m, z)| m + sd * z))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_access_matches_sequential() {
        let key = PathKey::new(11, 4);
        let seq = brownian_increments(key, 3, 20, 1.0);
        let mut stream = StepStream::new(key, Purpose::Noise, 3);
        let mut buf = [0.0; 3];
        for k in (0..20).rev() {
            stream.normals(k, &mut buf);
            assert_eq!(buf.as_slice(), seq[k].as_slice());
        }
    }

    #[test]
    fn streams_differ_by_path_and_purpose() {
        let a = brownian_increments(PathKey::new(1, 0), 2, 4, 1.0);
        let b = brownian_increments(PathKey::new(1, 1), 2, 4, 1.0);
        let c = brownian_increments(PathKey::new(2, 0), 2, 4, 1.0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        let u = crossing_uniforms(PathKey::new(1, 0), 4);
        assert!(u.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn normal_moments() {
        let mut stream = StepStream::new(PathKey::new(99, 0), Purpose::Noise, 2);
        let n = 50_000;
        let mut buf = [0.0; 2];
        let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
        for k in 0..n {
            stream.normals(k, &mut buf);
            for z in buf {
                s1 += z;
                s2 += z * z;
                s4 += z.powi(4);
            }
        }
        let m = (2 * n) as f64;
        assert!((s1 / m).abs() < 4.0 / m.sqrt());
        assert!((s2 / m - 1.0).abs() < 0.02);
        assert!((s4 / m - 3.0).abs() < 0.1);
    }
}
