//! Privacy accounting for the Poisson-subsampled Gaussian mechanism in Rényi
//! differential privacy, plus noise-multiplier calibration.
//!
//! RDP composes additively over steps and converts to (epsilon, delta) via
//!
//!     eps(a) = rdp(a) + ln((a-1)/a) - (ln(delta) + ln(a)) / (a - 1),
//!
//! minimized over the order grid and clamped at zero. RDP accounting reports
//! an upper bound on epsilon; it is conservative relative to tighter
//! numerical accountants, so for a fixed (epsilon, delta) target the
//! calibrated noise multiplier here is slightly larger than such accountants
//! would produce.
//!
//! The order grid is fixed and part of the golden-test contract: the
//! fractional orders {1.25, 1.5, 1.75} plus the integers 2..=256. Golden
//! values were computed by `scripts/rdp_oracle.py` (arbitrary-precision series
//! and quadrature) before this module was written.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bounds of the calibration search grid.
pub const SIGMA_FLOOR: f64 = 0.3;
pub const SIGMA_CEIL: f64 = 100.0;
/// Bisection stops when the bracket is narrower than this.
pub const SIGMA_TOL: f64 = 1e-3;

/// Target and mechanism parameters of one DP training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrivacySpec {
    pub epsilon_target: f64,
    pub delta: f64,
    /// Poisson sampling rate per step.
    pub sample_rate: f64,
    pub steps: u64,
    /// Noise multiplier (relative to the clipping norm).
    pub sigma: f64,
    pub clip_norm: f64,
}

impl PrivacySpec {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon_target <= 0.0 {
            return Err(Error::InvalidParameter("epsilon_target must be > 0".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter("delta must be in (0, 1)".into()));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(Error::InvalidParameter("sample_rate must be in (0, 1]".into()));
        }
        if self.sigma <= 0.0 {
            return Err(Error::InvalidParameter("sigma must be > 0".into()));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::InvalidParameter("clip_norm must be > 0".into()));
        }
        Ok(())
    }
}

/// RDP values per retained order, with a note for any excluded order.
#[derive(Debug, Clone)]
pub struct RdpCurve {
    /// `(order, rdp)` pairs, ascending in order.
    pub points: Vec<(f64, f64)>,
    /// Orders dropped for numerical reasons, with the reason.
    pub excluded: Vec<(f64, String)>,
}

impl RdpCurve {
    /// Compose over `t` identical mechanism invocations (exact linearity).
    pub fn compose(&self, t: u64) -> RdpCurve {
        RdpCurve {
            points: self.points.iter().map(|&(a, r)| (a, r * t as f64)).collect(),
            excluded: self.excluded.clone(),
        }
    }
}

/// The documented order grid: {1.25, 1.5, 1.75} then integers 2..=256.
pub fn default_orders() -> Vec<f64> {
    let mut orders = vec![1.25, 1.5, 1.75];
    orders.extend((2..=256).map(f64::from));
    orders
}

/// ln(a + b) given ln(a) and ln(b).
fn log_add(la: f64, lb: f64) -> f64 {
    let (hi, lo) = if la >= lb { (la, lb) } else { (lb, la) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// ln(a - b) given ln(a) >= ln(b).
fn log_sub(la: f64, lb: f64) -> f64 {
    if lb == f64::NEG_INFINITY {
        return la;
    }
    debug_assert!(la >= lb);
    if la == lb {
        return f64::NEG_INFINITY;
    }
    la + (-(lb - la).exp()).ln_1p()
}

fn ln_binom_int(n: u64, k: u64) -> f64 {
    // Exact-ish via lgamma.
    libm::lgamma((n + 1) as f64) - libm::lgamma((k + 1) as f64) - libm::lgamma((n - k + 1) as f64)
}

/// ln(erfc(x)), stable for large positive x.
fn log_erfc(x: f64) -> f64 {
    if x <= 20.0 {
        libm::erfc(x).ln()
    } else {
        // Asymptotic expansion: erfc(x) ~ exp(-x^2) / (x sqrt(pi)) *
        // (1 - 1/(2x^2) + 3/(4x^4) - 15/(8x^6)).
        let x2 = x * x;
        let series = 1.0 - 0.5 / x2 + 0.75 / (x2 * x2) - 1.875 / (x2 * x2 * x2);
        -x2 - (x * std::f64::consts::PI.sqrt()).ln() + series.ln()
    }
}

/// ln(A_alpha) for integer alpha via the exact binomial sum in log space.
fn log_a_int(q: f64, sigma: f64, alpha: u64) -> f64 {
    let mut log_a = f64::NEG_INFINITY;
    let (lq, l1q) = (q.ln(), (1.0 - q).ln());
    for k in 0..=alpha {
        let term = ln_binom_int(alpha, k)
            + k as f64 * lq
            + (alpha - k) as f64 * l1q
            + (k * k - k) as f64 / (2.0 * sigma * sigma);
        log_a = log_add(log_a, term);
    }
    log_a
}

/// ln(A_alpha) for fractional alpha via the two-sided binomial series split
/// at the mixture crossover z0 = sigma^2 ln(1/q - 1) + 1/2.
fn log_a_frac(q: f64, sigma: f64, alpha: f64) -> f64 {
    let z0 = sigma * sigma * (1.0 / q - 1.0).ln() + 0.5;
    let sqrt2s = std::f64::consts::SQRT_2 * sigma;
    let (lq, l1q) = (q.ln(), (1.0 - q).ln());
    let (mut log_a0, mut log_a1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);

    // Generalized binomial coefficient, tracked as (ln |coef|, sign).
    let mut ln_coef = 0.0f64;
    let mut coef_sign = 1.0f64;
    let mut i: u64 = 0;
    loop {
        let fi = i as f64;
        let j = alpha - fi;
        let log_t0 = ln_coef + fi * lq + j * l1q;
        let log_t1 = ln_coef + j * lq + fi * l1q;
        let log_e0 = (0.5f64).ln() + log_erfc((fi - z0) / sqrt2s);
        let log_e1 = (0.5f64).ln() + log_erfc((z0 - j) / sqrt2s);
        let log_s0 = log_t0 + (fi * fi - fi) / (2.0 * sigma * sigma) + log_e0;
        let log_s1 = log_t1 + (j * j - j) / (2.0 * sigma * sigma) + log_e1;
        if coef_sign > 0.0 {
            log_a0 = log_add(log_a0, log_s0);
            log_a1 = log_add(log_a1, log_s1);
        } else {
            log_a0 = log_sub(log_a0, log_s0);
            log_a1 = log_sub(log_a1, log_s1);
        }
        // Terms alternate in sign once i > alpha and decay; the iteration cap
        // bounds the polynomial tail well below 1e-9 relative for the grid.
        if fi > alpha && log_s0.max(log_s1) < log_add(log_a0, log_a1) - 60.0 {
            break;
        }
        if i >= 10_000 {
            break;
        }
        // coef_{i+1} = coef_i * (alpha - i) / (i + 1)
        let ratio = (alpha - fi) / (fi + 1.0);
        ln_coef += ratio.abs().ln();
        if ratio < 0.0 {
            coef_sign = -coef_sign;
        }
        i += 1;
    }
    log_add(log_a0, log_a1)
}

/// Per-invocation RDP of the subsampled Gaussian at one order.
fn rdp_single(q: f64, sigma: f64, order: f64) -> f64 {
    if q == 1.0 {
        return order / (2.0 * sigma * sigma);
    }
    let log_a = if order.fract() == 0.0 {
        log_a_int(q, sigma, order as u64)
    } else {
        log_a_frac(q, sigma, order)
    };
    log_a / (order - 1.0)
}

/// RDP curve of one subsampled-Gaussian invocation over the given orders.
///
/// Orders that evaluate to non-finite or negative values are excluded from
/// the curve with a note rather than clamped.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, orders: &[f64]) -> Result<RdpCurve> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidParameter(format!("q must be in (0, 1], got {q}")));
    }
    if sigma <= 0.0 {
        return Err(Error::InvalidParameter(format!("sigma must be > 0, got {sigma}")));
    }
    let mut points = Vec::with_capacity(orders.len());
    let mut excluded = Vec::new();
    for &a in orders {
        if a <= 1.0 {
            excluded.push((a, "order must be > 1".to_string()));
            continue;
        }
        let r = rdp_single(q, sigma, a);
        if r.is_finite() && r >= 0.0 {
            points.push((a, r));
        } else {
            excluded.push((a, format!("numerically unstable (rdp = {r})")));
        }
    }
    if points.is_empty() {
        return Err(Error::InvalidParameter(
            "no numerically stable orders remain".into(),
        ));
    }
    Ok(RdpCurve { points, excluded })
}

/// Result of the RDP -> (epsilon, delta) conversion.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpsilonReport {
    pub epsilon: f64,
    pub best_order: f64,
}

/// Convert an RDP curve to epsilon at the given delta, reporting the
/// minimizing order. With delta = 1 the conversion term is non-positive at
/// every order and the clamp returns epsilon = 0 (vacuous privacy).
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64) -> Result<EpsilonReport> {
    if curve.points.is_empty() {
        return Err(Error::InvalidParameter("empty RDP curve".into()));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidParameter(format!("delta must be in (0, 1], got {delta}")));
    }
    let mut best = (f64::INFINITY, 0.0);
    for &(a, r) in &curve.points {
        let eps = r + ((a - 1.0) / a).ln() - (delta.ln() + a.ln()) / (a - 1.0);
        if eps < best.0 {
            best = (eps, a);
        }
    }
    Ok(EpsilonReport {
        epsilon: best.0.max(0.0),
        best_order: best.1,
    })
}

/// Epsilon spent by `steps` invocations at sampling rate `q` and noise `sigma`.
pub fn epsilon_for(q: f64, sigma: f64, steps: u64, delta: f64) -> Result<EpsilonReport> {
    let curve = rdp_subsampled_gaussian(q, sigma, &default_orders())?;
    rdp_to_dp(&curve.compose(steps), delta)
}

/// Smallest sigma on the bisection grid with epsilon(sigma) <= target.
///
/// Bisects [`SIGMA_FLOOR`], [`SIGMA_CEIL`] down to [`SIGMA_TOL`] and returns
/// the upper bracket end. Monotonicity of epsilon in sigma is asserted at
/// every probe; an infeasible target reports the achievable range.
pub fn calibrate_sigma(epsilon_target: f64, delta: f64, q: f64, steps: u64) -> Result<f64> {
    if epsilon_target <= 0.0 {
        return Err(Error::InvalidParameter("epsilon_target must be > 0".into()));
    }
    let mut lo = SIGMA_FLOOR;
    let mut hi = SIGMA_CEIL;
    let eps_lo = epsilon_for(q, lo, steps, delta)?.epsilon;
    if eps_lo <= epsilon_target {
        return Ok(lo);
    }
    let eps_hi = epsilon_for(q, hi, steps, delta)?.epsilon;
    if eps_hi > epsilon_target {
        return Err(Error::Infeasible(format!(
            "epsilon {epsilon_target} unreachable: sigma in [{SIGMA_FLOOR}, {SIGMA_CEIL}] \
             achieves epsilon in [{eps_hi:.6}, {eps_lo:.6}]"
        )));
    }
    // Invariant: eps(lo) > target >= eps(hi).
    let mut eps_bracket = (eps_lo, eps_hi);
    while hi - lo > SIGMA_TOL {
        let mid = lo + (hi - lo) / 2.0;
        let eps_mid = epsilon_for(q, mid, steps, delta)?.epsilon;
        if eps_mid > eps_bracket.0 + 1e-9 || eps_mid < eps_bracket.1 - 1e-9 {
            return Err(Error::InvariantViolation(format!(
                "epsilon not monotone in sigma near {mid}: {eps_mid} outside \
                 [{}, {}]",
                eps_bracket.1, eps_bracket.0
            )));
        }
        if eps_mid <= epsilon_target {
            hi = mid;
            eps_bracket.1 = eps_mid;
        } else {
            lo = mid;
            eps_bracket.0 = eps_mid;
        }
    }
    Ok(hi)
}
