//! Closed-form KL term between the Gumbel-Sinkhorn posterior `G(X, τ)` and
//! the uniform prior `G(0, τ_prior)`, applied elementwise to the scores:
//!
//! ```text
//! KL = N²(ln(τ/τ_prior) − 1 + γ(τ_prior/τ − 1)) + S₁·τ_prior/τ + S₂·Γ(1 + τ_prior/τ)
//! S₁ = Σ x_ij,   S₂ = Σ exp(−x_ij·τ_prior/τ)
//! ```
//!
//! `S₂·Γ(1 + r)` is accumulated as `Σ exp(lnΓ(1 + r) − r·x_ij)` so that large
//! temperature ratios do not overflow before the product is formed.

use ndarray::Array2;

use crate::error::{Result, VebmError};
use crate::numeric::{ln_gamma, EULER_GAMMA};

use super::ScoreMatrix;

fn check(tau: f64, tau_prior: f64) -> Result<f64> {
    if !(tau > 0.0 && tau.is_finite() && tau_prior > 0.0 && tau_prior.is_finite()) {
        return Err(VebmError::InvalidArgument(format!(
            "temperatures must be positive, got tau={tau}, tau_prior={tau_prior}"
        )));
    }
    Ok(tau_prior / tau)
}

pub fn kl_gumbel_sinkhorn(x: &ScoreMatrix, tau: f64, tau_prior: f64) -> Result<f64> {
    kl_value(x.as_array(), tau, tau_prior)
}

pub(crate) fn kl_value(x: &Array2<f64>, tau: f64, tau_prior: f64) -> Result<f64> {
    let r = check(tau, tau_prior)?;
    let n2 = x.len() as f64;
    let lg = ln_gamma(1.0 + r);
    let s1: f64 = x.sum();
    let s2_gamma: f64 = x.iter().map(|&v| (lg - r * v).exp()).sum();
    if !s2_gamma.is_finite() {
        return Err(VebmError::KlOverflow(format!(
            "Σ exp(-x·τ_prior/τ)·Γ(1+τ_prior/τ) overflows (min score {})",
            x.iter().copied().fold(f64::INFINITY, f64::min)
        )));
    }
    let constant = n2 * ((tau / tau_prior).ln() - 1.0 + EULER_GAMMA * (r - 1.0));
    Ok(constant + s1 * r + s2_gamma)
}

/// `∂KL/∂x_ij = r − r·exp(−r·x_ij)·Γ(1 + r)` with `r = τ_prior/τ`.
pub fn kl_gumbel_sinkhorn_grad(x: &ScoreMatrix, tau: f64, tau_prior: f64) -> Result<Array2<f64>> {
    kl_grad(x.as_array(), tau, tau_prior)
}

pub(crate) fn kl_grad(x: &Array2<f64>, tau: f64, tau_prior: f64) -> Result<Array2<f64>> {
    let r = check(tau, tau_prior)?;
    let lg = ln_gamma(1.0 + r);
    let g = x.mapv(|v| r - r * (lg - r * v).exp());
    if g.iter().any(|v| !v.is_finite()) {
        return Err(VebmError::KlOverflow("KL gradient".into()));
    }
    Ok(g)
}
