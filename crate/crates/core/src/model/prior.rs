//! Priors on the working parameters.
//!
//! * `(u_off, u_on - u_off, a - u_on) / a ~ Dirichlet(1, 1, 1)`
//! * `s_on / a ~ Beta(2, 1)`
//! * `u_sw | u_off, u_on ~ U(u_off, u_on)` (open interval)
//! * `phi ~ U(0, 2 pi)`
//! * `eta ~ N(0, 10000^2)` truncated to `[0, inf)`, unnormalised
//! * `lambda ~ U(0, 1]`

use std::f64::consts::LN_2;

use super::{Dataset, GeneParams, ModelState};
use crate::error::Result;
use crate::geometry::TWO_PI;

pub const ETA_PRIOR_SD: f64 = 10_000.0;

#[inline]
pub fn coords_logprior(gp: &GeneParams, a: f64) -> f64 {
    let ordered = 0.0 <= gp.u_off && gp.u_off < gp.u_on && gp.u_on <= a;
    if !ordered || !(gp.s_on > 0.0 && gp.s_on <= a) {
        return f64::NEG_INFINITY;
    }
    // Dirichlet(1,1,1) density 2 / a^2 on (u_off, u_on); Beta(2,1) 2 s_on / a^2.
    (LN_2 - 2.0 * a.ln()) + (LN_2 + gp.s_on.ln() - 2.0 * a.ln())
}

#[inline]
pub fn switch_logprior(u_sw: f64, u_off: f64, u_on: f64) -> f64 {
    if u_off < u_sw && u_sw < u_on {
        -(u_on - u_off).ln()
    } else {
        f64::NEG_INFINITY
    }
}

#[inline]
pub fn phi_logprior(phi: f64) -> f64 {
    if (0.0..=TWO_PI).contains(&phi) {
        -TWO_PI.ln()
    } else {
        f64::NEG_INFINITY
    }
}

#[inline]
pub fn eta_logprior(eta: f64) -> f64 {
    if eta >= 0.0 {
        -0.5 * (eta / ETA_PRIOR_SD).powi(2)
    } else {
        f64::NEG_INFINITY
    }
}

#[inline]
pub fn lambda_logprior(lambda: f64) -> f64 {
    if lambda > 0.0 && lambda <= 1.0 {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

/// Joint log-prior; `-inf` outside the support.
pub fn log_prior(state: &ModelState) -> f64 {
    let a = state.hyper.a;
    let n_genes = state.n_genes();
    let mut lp = 0.0;
    for gp in &state.genes {
        lp += coords_logprior(gp, a) + eta_logprior(gp.eta);
    }
    for (i, &u) in state.u_sw.iter().enumerate() {
        let gp = &state.genes[i % n_genes];
        lp += switch_logprior(u, gp.u_off, gp.u_on);
    }
    lp += state.phi.iter().map(|&phi| phi_logprior(phi)).sum::<f64>();
    lp += state.lambda.iter().map(|&l| lambda_logprior(l)).sum::<f64>();
    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}

/// Log-posterior up to a constant. The likelihood is only evaluated inside
/// the prior support.
pub fn log_posterior(state: &ModelState, data: &Dataset) -> Result<f64> {
    let lp = log_prior(state);
    if lp == f64::NEG_INFINITY {
        return Ok(lp);
    }
    Ok(lp + super::log_likelihood(state, data)?)
}
