//! Negative-Binomial observation model with per-cell capture efficiency.

use rayon::prelude::*;
use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::ln_gamma;

use super::{Dataset, ModelState};
use crate::error::{Error, Result};
use crate::kinetics::Position;

/// Overdispersion below which the Poisson limit is used.
pub const POISSON_ETA: f64 = 1e-10;

/// Counts up to this size use an explicit sum for `ln Gamma(r + y) - ln Gamma(r)`.
const RISING_SUM_MAX: u32 = 256;

/// `ln Gamma(r + y) - ln Gamma(r)`.
#[inline]
pub fn log_rising(r: f64, y: u32) -> f64 {
    if y <= RISING_SUM_MAX {
        (0..y).map(|i| (r + f64::from(i)).ln()).sum()
    } else {
        ln_gamma(r + f64::from(y)) - ln_gamma(r)
    }
}

#[inline]
pub fn ln_fact(y: u32) -> f64 {
    ln_factorial(u64::from(y))
}

/// Log-probability of `y` under a Negative Binomial with mean `mu` and
/// variance `mu + mu^2 eta` (size `1 / eta`). Falls back to the Poisson for
/// `eta < 1e-10`; `mu = 0` is the point mass at zero. Returns NaN for a
/// negative or non-finite mean.
pub fn nb_logpmf(y: u32, mu: f64, eta: f64) -> f64 {
    if !(mu >= 0.0 && mu.is_finite()) || eta.is_nan() || eta < 0.0 {
        return f64::NAN;
    }
    if mu == 0.0 {
        return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let yf = f64::from(y);
    if eta < POISSON_ETA {
        return yf * mu.ln() - mu - ln_fact(y);
    }
    let r = 1.0 / eta;
    // r ln(r / (r + mu)) + y ln(mu / (r + mu))
    let tail = -r * (mu / r).ln_1p() + if y == 0 { 0.0 } else { yf * (mu.ln() - (r + mu).ln()) };
    log_rising(r, y) - ln_fact(y) + tail
}

fn checked_term(y: u32, mu: f64, eta: f64, cell: usize, gene: usize) -> Result<f64> {
    if !mu.is_finite() {
        return Err(Error::NonFiniteMean { cell, gene });
    }
    Ok(nb_logpmf(y, mu, eta))
}

fn gene_terms(state: &ModelState, data: &Dataset, positions: &[Position], g: usize) -> Result<Vec<f64>> {
    let n_genes = state.n_genes();
    let eta = state.genes[g].eta;
    (0..data.n_cells())
        .map(|c| {
            let pos = positions[data.subgroup_of_cell[c] * n_genes + g];
            let lam = state.lambda[c];
            Ok(checked_term(data.spliced.get(c, g), lam * pos.s, eta, c, g)?
                + checked_term(data.unspliced.get(c, g), lam * pos.u, eta, c, g)?)
        })
        .collect()
}

/// Per-(cell, gene) log-likelihood contributions, spliced and unspliced
/// combined, as a cells x genes row-major matrix.
pub fn loglik_matrix(state: &ModelState, data: &Dataset) -> Result<Vec<f64>> {
    state.check_shape(data.n_cells(), data.n_groups(), data.n_subgroups())?;
    let positions = state.positions(&data.group_of_subgroup);
    let by_gene = (0..data.n_genes())
        .into_par_iter()
        .map(|g| gene_terms(state, data, &positions, g))
        .collect::<Result<Vec<_>>>()?;
    let n_genes = data.n_genes();
    let mut out = vec![0.0; data.n_cells() * n_genes];
    for (g, col) in by_gene.iter().enumerate() {
        for (c, v) in col.iter().enumerate() {
            out[c * n_genes + g] = *v;
        }
    }
    Ok(out)
}

/// Total log-likelihood of the data.
pub fn log_likelihood(state: &ModelState, data: &Dataset) -> Result<f64> {
    state.check_shape(data.n_cells(), data.n_groups(), data.n_subgroups())?;
    let positions = state.positions(&data.group_of_subgroup);
    let per_gene = (0..data.n_genes())
        .into_par_iter()
        .map(|g| gene_terms(state, data, &positions, g).map(|t| t.iter().sum::<f64>()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_gene.iter().sum())
}
