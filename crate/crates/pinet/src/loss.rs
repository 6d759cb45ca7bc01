//! Loss functions: the asymmetric absolute (pinball) loss, the composite
//! three-quantile interval loss, empirical risk over a subset, and the
//! Gaussian negative log-likelihood baseline.

use crate::data::Subset;
use crate::error::{Error, Result};
use crate::net::{PiTriple, Predictor};

/// Pinball loss `h_τ(u) = (τ - 1{u ≤ 0})·u`.
///
/// Non-negative for every `τ ∈ [0,1]`; its population minimizer over a
/// location parameter is the τ-quantile.
pub fn pinball(tau: f64, u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&tau) || tau.is_nan() {
        return Err(Error::Domain(format!("pinball level {tau} outside [0,1]")));
    }
    if !u.is_finite() {
        return Err(Error::NonFinite("pinball argument".into()));
    }
    Ok(pinball_raw(tau, u))
}

/// Unchecked pinball kernel for pre-validated hot paths.
#[inline]
pub(crate) fn pinball_raw(tau: f64, u: f64) -> f64 {
    if u > 0.0 {
        tau * u
    } else {
        (tau - 1.0) * u
    }
}

/// Derivative of the pinball loss in `u`, with the kink convention
/// `h'_τ(0) = τ - 1` (the indicator `1{u ≤ 0}` evaluates to 1 at 0).
#[inline]
pub(crate) fn pinball_grad(tau: f64, u: f64) -> f64 {
    if u > 0.0 {
        tau
    } else {
        tau - 1.0
    }
}

/// Composite interval loss at level `τ`: pinball terms at levels `τ/2`,
/// `1/2`, and `1-τ/2` on the residuals from the lower, median, and upper
/// outputs.
pub fn pi_loss(triple: &PiTriple, y: f64, tau: f64) -> Result<f64> {
    if !(0.0 < tau && tau <= 1.0) {
        return Err(Error::Domain(format!(
            "interval loss level {tau} outside (0,1]"
        )));
    }
    if !triple.lower.is_finite() || !triple.median.is_finite() || !triple.upper.is_finite() {
        return Err(Error::Domain(
            "interval loss is undefined for infinite endpoints".into(),
        ));
    }
    if !y.is_finite() {
        return Err(Error::NonFinite("interval loss response".into()));
    }
    Ok(pinball_raw(tau / 2.0, y - triple.lower)
        + pinball_raw(0.5, y - triple.median)
        + pinball_raw(1.0 - tau / 2.0, y - triple.upper))
}

/// Mean composite loss of a predictor over a subset.
pub fn empirical_risk<P: Predictor + ?Sized>(net: &P, data: &Subset, tau: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData("empirical risk over empty subset"));
    }
    let mut total = 0.0;
    for (row, &y) in data.features.iter_rows().zip(&data.responses) {
        total += pi_loss(&net.predict_triple(row), y, tau)?;
    }
    Ok(total / data.len() as f64)
}

/// Gaussian negative log-likelihood `½·log(2πσ²) + (y-μ)²/(2σ²)`.
///
/// May be negative when the density exceeds 1.
pub fn gaussian_nll(mu: f64, var: f64, y: f64) -> Result<f64> {
    if var.is_nan() || var <= 0.0 {
        return Err(Error::Domain(format!(
            "variance must be positive, got {var}"
        )));
    }
    if !mu.is_finite() || !y.is_finite() || !var.is_finite() {
        return Err(Error::NonFinite("gaussian likelihood arguments".into()));
    }
    Ok(0.5 * (2.0 * std::f64::consts::PI * var).ln() + (y - mu) * (y - mu) / (2.0 * var))
}
