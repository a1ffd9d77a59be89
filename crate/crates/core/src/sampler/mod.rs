//! Adaptive Metropolis-within-Gibbs sampler over the full model state.
//!
//! One sweep updates, in order, every gene's `(u_off, u_on, s_on)` jointly,
//! its overdispersion, its switching level in each group and its angle in
//! each subgroup, and then every cell's capture efficiency. Genes are
//! conditionally independent given the capture efficiencies and are updated
//! in parallel; every gene and every cell has its own random stream, so the
//! output depends on the seed only.

mod adapt;
mod chain;
mod draws;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use adapt::{adapt_gain, adapt_univariate, AdaptiveMvn, AdaptiveScale};
pub use chain::{initial_state, run_chain, Chain, Init, ProposalState};
pub use draws::{Acceptance, AcceptanceReport, PointwiseAccumulator, PosteriorDraws};

use crate::error::{Error, Result};

/// Blocks held fixed at their initial values (for diagnostics and tests).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedBlocks {
    pub coords: bool,
    pub eta: bool,
    pub switch: bool,
    pub phi: bool,
    pub lambda: bool,
}

impl FixedBlocks {
    /// Everything fixed except the named blocks.
    pub fn all() -> Self {
        Self {
            coords: true,
            eta: true,
            switch: true,
            phi: true,
            lambda: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub adapt_start: usize,
    pub adapt_end: usize,
    pub gamma_c1: f64,
    pub gamma_c2: f64,
    pub univariate_adapt_interval: usize,
    /// Keep the full per-draw pointwise log-likelihood matrix.
    pub store_loglik: bool,
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
    pub fixed: FixedBlocks,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self::new(250_000, 200_000, 25, 0).expect("default schedule is valid")
    }
}

impl ChainConfig {
    /// Schedule with the standard adaptation settings; adaptation stops at
    /// 90% of the burn-in.
    pub fn new(n_iter: usize, n_burnin: usize, thin: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            n_iter,
            n_burnin,
            thin,
            seed,
            target_accept: 0.25,
            adapt_start: 100,
            adapt_end: n_burnin * 9 / 10,
            gamma_c1: 2500.0,
            gamma_c2: 20_000.0,
            univariate_adapt_interval: 100,
            store_loglik: false,
            threads: 0,
            fixed: FixedBlocks::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_burnin >= self.n_iter {
            return bad(format!("burn-in {} must be below n_iter {}", self.n_burnin, self.n_iter));
        }
        if self.thin == 0 {
            return bad("thin must be at least 1".into());
        }
        if self.adapt_end > self.n_burnin {
            return bad(format!("adaptation end {} beyond burn-in {}", self.adapt_end, self.n_burnin));
        }
        if self.univariate_adapt_interval == 0 {
            return bad("adaptation interval must be at least 1".into());
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad(format!("target acceptance {} outside (0, 1)", self.target_accept));
        }
        if !(self.gamma_c1 > 0.0 && self.gamma_c2 > 0.0) {
            return bad("gain constants must be positive".into());
        }
        Ok(())
    }

    /// Number of retained draws.
    pub fn n_draws(&self) -> usize {
        (self.n_iter - self.n_burnin) / self.thin
    }

    #[inline]
    pub fn is_adapting(&self, k: usize) -> bool {
        self.adapt_start <= k && k <= self.adapt_end
    }

    #[inline]
    pub fn is_retained(&self, k: usize) -> bool {
        k > self.n_burnin && (k - self.n_burnin).is_multiple_of(self.thin) && k <= self.n_iter
    }
}

/// Result of [`sample_univariate`].
#[derive(Debug, Clone)]
pub struct UnivariateRun {
    pub draws: Vec<f64>,
    /// Acceptance rate after adaptation was frozen.
    pub frozen_acceptance: f64,
    pub final_log_sd: f64,
}

/// Adaptive random-walk Metropolis on a univariate target, with the same
/// schedule as the per-parameter blocks of the full sampler.
pub fn sample_univariate<F: Fn(f64) -> f64>(log_density: F, x0: f64, sd0: f64, cfg: &ChainConfig) -> Result<UnivariateRun> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scale = AdaptiveScale::new(sd0);
    let mut x = x0;
    let mut lp = log_density(x);
    if !lp.is_finite() {
        return Err(Error::InvalidInitialization { block: "x".into() });
    }
    let mut frozen = Acceptance::default();
    let mut draws = Vec::with_capacity(cfg.n_draws());
    for k in 1..=cfg.n_iter {
        let z: f64 = rng.sample(StandardNormal);
        let y = x + scale.sd() * z;
        let lq = log_density(y);
        let u: f64 = rng.random();
        let accepted = u.ln() < lq - lp;
        if accepted {
            x = y;
            lp = lq;
        }
        scale.record(accepted);
        if k > cfg.adapt_end {
            frozen.record(accepted);
        }
        if k % cfg.univariate_adapt_interval == 0 {
            let gain = adapt_gain(k, cfg.gamma_c1, cfg.gamma_c2);
            scale.end_window(cfg.is_adapting(k), gain, cfg.target_accept);
        }
        if cfg.is_retained(k) {
            draws.push(x);
        }
    }
    Ok(UnivariateRun {
        draws,
        frozen_acceptance: frozen.rate().unwrap_or(f64::NAN),
        final_log_sd: scale.log_sd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule() {
        let cfg = ChainConfig::default();
        assert_eq!(cfg.adapt_end, 180_000);
        assert_eq!(cfg.n_draws(), 2000);
        assert!(cfg.is_retained(200_025) && !cfg.is_retained(200_000));
        assert!(!cfg.is_adapting(99) && cfg.is_adapting(100) && !cfg.is_adapting(180_001));
    }

    #[test]
    fn rejects_bad_schedules() {
        assert!(ChainConfig::new(10, 10, 1, 0).is_err());
        assert!(ChainConfig::new(10, 5, 0, 0).is_err());
        let mut cfg = ChainConfig::new(10, 5, 1, 0).unwrap();
        cfg.adapt_end = 6;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn standard_normal_toy_acceptance() {
        let cfg = ChainConfig::new(200_000, 100_000, 10, 11).unwrap();
        let run = sample_univariate(|x| -0.5 * x * x, 3.0, 0.1, &cfg).unwrap();
        assert!((run.frozen_acceptance - 0.25).abs() <= 0.05, "{}", run.frozen_acceptance);
        let m = crate::stats::mean(&run.draws);
        let v = crate::stats::variance(&run.draws);
        assert!(m.abs() < 0.1 && (v - 1.0).abs() < 0.15, "{m} {v}");
    }
}
