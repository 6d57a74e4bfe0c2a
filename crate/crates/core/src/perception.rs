//! Distortion of observed durations into perceived durations.
//!
//! A duration `g` is perceived as `(alpha e^{-g/k} + beta) g eps`. Only the
//! ratio `alpha / beta` is estimable, so every quantity here is expressed in
//! units of `beta`: the perceived value is `((alpha/beta) e^{-g/k} + 1) g eps`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::UnitMeanLognormal;

/// `e^2`, the largest `alpha/beta` for which the mean perceived duration is
/// still increasing in the observed duration.
pub const ALPHA_OVER_BETA_MAX: f64 = 7.389_056_098_930_65;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceptionParams {
    pub alpha_over_beta: f64,
    /// Decay scale of the bias term, seconds.
    pub k: f64,
    /// Variance of the multiplicative error.
    pub v: f64,
}

impl PerceptionParams {
    /// Parameters inside the closed box `0 < alpha/beta <= e^2`, `k > 0`, `v > 0`.
    pub fn new(alpha_over_beta: f64, k: f64, v: f64) -> Result<Self> {
        let p = Self::relaxed(alpha_over_beta, k, v)?;
        if alpha_over_beta > ALPHA_OVER_BETA_MAX {
            return Err(Error::domain(format!(
                "alpha/beta = {alpha_over_beta} exceeds e^2"
            )));
        }
        Ok(p)
    }

    /// Like [`new`](Self::new) but only requires `alpha/beta > 0`.
    pub fn relaxed(alpha_over_beta: f64, k: f64, v: f64) -> Result<Self> {
        if !(alpha_over_beta > 0.0) || !alpha_over_beta.is_finite() {
            return Err(Error::domain(format!(
                "alpha/beta must be positive, got {alpha_over_beta}"
            )));
        }
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::domain(format!("k must be positive, got {k}")));
        }
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::domain(format!("v must be positive, got {v}")));
        }
        Ok(Self {
            alpha_over_beta,
            k,
            v,
        })
    }

    pub fn error_dist(&self) -> UnitMeanLognormal {
        UnitMeanLognormal::new(self.v).expect("v validated on construction")
    }

    /// `(alpha/beta) e^{-g/k} + 1`, without the domain check.
    #[inline]
    pub(crate) fn bias_unchecked(&self, g: f64) -> f64 {
        self.alpha_over_beta * (-g / self.k).exp() + 1.0
    }

    /// Mean perceived duration of `g`, in beta-scaled seconds.
    #[inline]
    pub fn mean_perceived(&self, g: f64) -> f64 {
        self.bias_unchecked(g) * g
    }
}

/// Multiplicative bias `(alpha/beta) e^{-g/k} + 1` at an observed duration `g > 0`.
pub fn scaled_bias(g: f64, p: &PerceptionParams) -> Result<f64> {
    if !(g > 0.0) {
        return Err(Error::domain(format!("duration must be positive, got {g}")));
    }
    Ok(p.bias_unchecked(g))
}

/// One draw of the perceived duration of `g` (beta-scaled).
pub fn sample_perceived<R: Rng + ?Sized>(g: f64, p: &PerceptionParams, rng: &mut R) -> Result<f64> {
    let bias = scaled_bias(g, p)?;
    let err = p.error_dist();
    Ok(bias * g * draw_error(&err, rng))
}

#[inline]
pub(crate) fn draw_error<R: Rng + ?Sized>(err: &UnitMeanLognormal, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    (err.mu() + err.sigma() * z).exp()
}
