//! Deterministic seeded randomness.
//!
//! `RngState` wraps a ChaCha20 stream cipher keyed by a 64-bit seed, with the
//! cipher's 64-bit stream id used to decorrelate independent consumers. The
//! same `(seed, stream_id, call sequence)` always yields bit-identical
//! output. Normal variates come from the inverse-CDF method (Acklam's
//! rational approximation of the probit function), which consumes exactly one
//! uniform draw per sample.
//!
//! Stream-id layout used by the trainer is documented in [`streams`].

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fixed stream-id bases for the different consumers of a run's seeds.
///
/// Stream ids only need to be unique per seed; the bases below keep the
/// consumers of one seed collision-free by construction:
/// - parameter init (init seed): stream = parameter group index
/// - dataset generation (data seed): stream = `DATA_GEN`
/// - batch sampling (data seed): stream = `BATCH_BASE + step`
/// - gradient noise (noise seed): stream = `NOISE_BASE + step * GROUP_SPAN + group`
pub mod streams {
    pub const DATA_GEN: u64 = 0;
    pub const BATCH_BASE: u64 = 1 << 32;
    pub const NOISE_BASE: u64 = 1 << 40;
    /// Maximum parameter groups addressable per step in the noise layout.
    pub const GROUP_SPAN: u64 = 1 << 20;

    pub fn noise_stream(step: u64, group: u64) -> u64 {
        debug_assert!(group < GROUP_SPAN);
        NOISE_BASE + step * GROUP_SPAN + group
    }
}

/// Seeded, stream-addressable random state.
///
/// Single-consumer: do not share one state across threads; derive one state
/// per consumer with a distinct stream id instead.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
}

impl RngState {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngState {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in the open interval (0, 1), 53-bit resolution.
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
    }

    /// Uniform integer in `[0, n)`.
    pub fn uniform_usize(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Modulo bias is below 2^-50 for the n used here (vocab sizes etc).
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal variate via the inverse CDF.
    pub fn standard_normal(&mut self) -> f64 {
        inverse_normal_cdf(self.uniform())
    }

    /// Tensor of i.i.d. N(0, sigma^2) entries.
    pub fn gaussian(&mut self, shape: &[usize], sigma: f64) -> Result<Tensor> {
        if sigma < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "gaussian sigma must be >= 0, got {sigma}"
            )));
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        if sigma == 0.0 {
            data.resize(n, 0.0);
        } else {
            for _ in 0..n {
                data.push(sigma * self.standard_normal());
            }
        }
        Tensor::from_vec(shape, data)
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.uniform_usize(i + 1);
            p.swap(i, j);
        }
        p
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

/// Acklam's rational approximation of the standard normal quantile function,
/// |relative error| < 1.15e-9 over the full open interval.
fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);

    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}
