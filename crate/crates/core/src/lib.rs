//! Bayesian inference of RNA-velocity kinetics from paired spliced/unspliced
//! single-cell count matrices.
//!
//! The crate is organised bottom-up:
//!
//! * [`kinetics`]: closed-form solution of the transcription/splicing/degradation ODE.
//! * [`geometry`]: the steady-state / switching-level / angle reparameterisation.
//! * [`model`]: data, parameter state, Negative-Binomial likelihood and priors.
//! * [`sampler`]: adaptive Metropolis-within-Gibbs MCMC.
//! * [`simulate`]: synthetic parameters and data, plus a Gillespie simulator.
//! * [`evaluate`]: posterior summaries, error/coverage tables, WAIC, PCA.
//! * [`io`]: count-matrix ingestion and posterior persistence.

pub mod error;
pub mod evaluate;
pub mod geometry;
pub mod io;
pub mod kinetics;
pub mod model;
pub mod sampler;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
