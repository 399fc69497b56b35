//! Scalar special functions and Gaussian log densities.
//!
//! `digamma` and `ln_gamma` shift the argument upward with the recurrence
//! relations until the asymptotic (Stirling / Bernoulli) series is accurate
//! to double precision, then evaluate the series.

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Below this the argument is shifted upward before the series is used.
const SERIES_THRESHOLD: f64 = 10.0;

/// ψ(x), the logarithmic derivative of Γ.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("digamma requires x > 0, got {x}")));
    }
    Ok(digamma_unchecked(x))
}

/// ψ(x) for arguments already known to be positive and finite.
#[inline]
pub(crate) fn digamma_unchecked(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut z = x;
    let mut shift = 0.0;
    while z < SERIES_THRESHOLD {
        shift -= 1.0 / z;
        z += 1.0;
    }
    // ln z - 1/(2z) - sum_k B_{2k} / (2k z^{2k})
    let r = 1.0 / z;
    let r2 = r * r;
    let tail = r2
        * (1.0 / 12.0
            - r2 * (1.0 / 120.0
                - r2 * (1.0 / 252.0
                    - r2 * (1.0 / 240.0
                        - r2 * (1.0 / 132.0 - r2 * (691.0 / 32_760.0 - r2 / 12.0))))));
    shift + z.ln() - 0.5 * r - tail
}

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("ln_gamma requires x > 0, got {x}")));
    }
    Ok(ln_gamma_unchecked(x))
}

#[inline]
pub(crate) fn ln_gamma_unchecked(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    let mut z = x;
    let mut prod = 1.0;
    let mut log_shift = 0.0;
    while z < SERIES_THRESHOLD {
        prod *= z;
        // keep the running product well inside the f64 range
        if prod > 1e280 {
            log_shift += prod.ln();
            prod = 1.0;
        }
        z += 1.0;
    }
    log_shift += prod.ln();
    let r = 1.0 / z;
    let r2 = r * r;
    let series = r
        * (1.0 / 12.0
            - r2 * (1.0 / 360.0
                - r2 * (1.0 / 1260.0
                    - r2 * (1.0 / 1680.0
                        - r2 * (1.0 / 1188.0 - r2 * (691.0 / 360_360.0 - r2 / 156.0))))));
    (z - 0.5) * z.ln() - z + 0.5 * LN_2PI + series - log_shift
}

/// ln B(a, b) = ln Γ(a) + ln Γ(b) - ln Γ(a + b).
#[inline]
pub(crate) fn ln_beta_unchecked(a: f64, b: f64) -> f64 {
    ln_gamma_unchecked(a) + ln_gamma_unchecked(b) - ln_gamma_unchecked(a + b)
}

/// Log density of independent Gaussians with diagonal variances.
pub fn log_normal_pdf(x: &[f64], mean: &[f64], var_diag: &[f64]) -> Result<f64> {
    if x.len() != mean.len() || x.len() != var_diag.len() {
        return Err(Error::Domain(format!(
            "dimension mismatch: x {}, mean {}, var {}",
            x.len(),
            mean.len(),
            var_diag.len()
        )));
    }
    let mut acc = 0.0;
    for ((&xi, &mi), &vi) in x.iter().zip(mean).zip(var_diag) {
        if !(vi > 0.0) {
            return Err(Error::Domain(format!(
                "variance must be positive, got {vi}"
            )));
        }
        let d = xi - mi;
        acc += -0.5 * (LN_2PI + vi.ln()) - 0.5 * d * d / vi;
    }
    Ok(acc)
}

/// ln(2π).
pub const fn ln_two_pi() -> f64 {
    LN_2PI
}

/// Log-sum-exp of a slice; `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Normalizes log weights in place into a probability vector.
pub fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
