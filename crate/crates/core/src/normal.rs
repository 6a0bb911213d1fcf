//! Standard normal distribution functions.
//!
//! `cdf` and `sf` are computed from `erfc` so both tails keep full relative
//! precision. The Mills ratio switches to a continued fraction in the far
//! upper tail, where `sf` and `pdf` would both underflow.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Above this point the Mills ratio is evaluated by continued fraction.
const MILLS_CF_THRESHOLD: f64 = 6.0;

pub fn pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Φ(x).
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail 1 − Φ(x).
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Φ⁻¹(p). Returns ∓∞ at p = 0 and p = 1.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    // One Newton step against the accurate cdf.
    let step = if x < 0.0 { (cdf(x) - p) / pdf(x) } else { ((1.0 - p) - sf(x)) / pdf(x) };
    if step.is_finite() {
        x - step
    } else {
        x
    }
}

/// Mills ratio (1 − Φ(x)) / φ(x) for x ≥ 0.
pub fn mills_ratio(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x.is_infinite() {
        return 0.0;
    }
    if x < MILLS_CF_THRESHOLD {
        return sf(x) / pdf(x);
    }
    // Laplace continued fraction 1/(x+1/(x+2/(x+3/(x+...)))).
    let mut tail = 0.0;
    for n in (1..=60).rev() {
        tail = n as f64 / (x + tail);
    }
    1.0 / (x + tail)
}
