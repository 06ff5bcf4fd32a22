//! Scalar and vector kernels shared by the forward and backward passes.

use crate::error::{Error, Result};

/// `ln(1 + exp(z))` without overflow.
///
/// For `z > 0` this evaluates `z + ln(1 + exp(-z))`, otherwise
/// `ln(1 + exp(z))`, both through `ln_1p`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Checked variant of [`softplus`] that rejects NaN and infinities.
pub fn softplus_stable(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::NonFinite {
            what: "softplus input",
            layer: None,
        });
    }
    Ok(softplus(z))
}

/// Logistic function, evaluated as `exp(z - softplus(z))`.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    (z - softplus(z)).exp()
}

/// `ln Σ exp(x_i)` with max subtraction.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = x.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Writes `log softmax(x)` into `out`.
pub fn log_softmax_into(x: &[f64], out: &mut [f64]) {
    let lse = log_sum_exp(x);
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}

/// Softmax with max subtraction.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for o in &mut out {
        *o /= sum;
    }
    out
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = i;
        }
    }
    best
}
