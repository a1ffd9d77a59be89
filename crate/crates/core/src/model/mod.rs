//! Hierarchical Negative-Binomial model: data layout, parameters, likelihood
//! and priors.

mod dataset;
mod likelihood;
mod prior;
mod state;

pub use dataset::{CountMatrix, Dataset};
pub use likelihood::{ln_fact, log_likelihood, log_rising, loglik_matrix, nb_logpmf, POISSON_ETA};
pub use prior::{
    coords_logprior, eta_logprior, lambda_logprior, log_posterior, log_prior, phi_logprior,
    switch_logprior, ETA_PRIOR_SD,
};
pub use state::{rescale_capture, scale_capture, GeneParams, Hyper, ModelState, BETA};
