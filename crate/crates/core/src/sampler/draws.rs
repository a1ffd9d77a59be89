use serde::{Deserialize, Serialize};

use super::ChainConfig;
use crate::model::ModelState;

/// Accepted / proposed counts of one block family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acceptance {
    pub accepted: u64,
    pub proposed: u64,
}

impl Acceptance {
    #[inline]
    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
    }

    pub fn merge(&mut self, other: &Acceptance) {
        self.accepted += other.accepted;
        self.proposed += other.proposed;
    }

    /// `None` when nothing was proposed.
    pub fn rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }
}

/// Acceptance per block family, counted once adaptation is frozen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceReport {
    pub coords: Acceptance,
    pub eta: Acceptance,
    pub switch: Acceptance,
    pub phi: Acceptance,
    pub lambda: Acceptance,
}

impl AcceptanceReport {
    pub fn merge(&mut self, other: &AcceptanceReport) {
        self.coords.merge(&other.coords);
        self.eta.merge(&other.eta);
        self.switch.merge(&other.switch);
        self.phi.merge(&other.phi);
        self.lambda.merge(&other.lambda);
    }

    pub fn blocks(&self) -> [(&'static str, Acceptance); 5] {
        [
            ("coords", self.coords),
            ("eta", self.eta),
            ("switch", self.switch),
            ("phi", self.phi),
            ("lambda", self.lambda),
        ]
    }
}

/// Streaming per-observation summaries of the log-likelihood over draws:
/// a running log-sum-exp for the pointwise predictive density and Welford
/// moments for its variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseAccumulator {
    n: usize,
    max: Vec<f64>,
    sum_exp: Vec<f64>,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl PointwiseAccumulator {
    pub fn new(n_points: usize) -> Self {
        Self {
            n: 0,
            max: vec![f64::NEG_INFINITY; n_points],
            sum_exp: vec![0.0; n_points],
            mean: vec![0.0; n_points],
            m2: vec![0.0; n_points],
        }
    }

    pub fn n_draws(&self) -> usize {
        self.n
    }

    pub fn n_points(&self) -> usize {
        self.max.len()
    }

    pub fn push(&mut self, ll: &[f64]) {
        assert_eq!(ll.len(), self.max.len(), "pointwise vector length");
        self.n += 1;
        let n = self.n as f64;
        for (i, &v) in ll.iter().enumerate() {
            if v > self.max[i] {
                self.sum_exp[i] = self.sum_exp[i] * (self.max[i] - v).exp() + 1.0;
                self.max[i] = v;
            } else if v.is_finite() {
                self.sum_exp[i] += (v - self.max[i]).exp();
            }
            let d = v - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (v - self.mean[i]);
        }
    }

    /// `ln( mean_s exp(ll_s) )` per observation.
    pub fn log_mean_exp(&self) -> Vec<f64> {
        let ln_n = (self.n as f64).ln();
        self.max
            .iter()
            .zip(&self.sum_exp)
            .map(|(m, s)| m + s.ln() - ln_n)
            .collect()
    }

    /// Sample variance (denominator `n - 1`) per observation.
    pub fn variances(&self) -> Vec<f64> {
        let d = self.n as f64 - 1.0;
        self.m2.iter().map(|m| m / d).collect()
    }
}

/// Output of one chain.
///
/// `draws` are capture-rescaled; `log_posterior` and `log_likelihood` were
/// evaluated on the state before rescaling. Pointwise log-likelihoods are
/// indexed `c * G + g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub config: ChainConfig,
    pub group_of_subgroup: Vec<usize>,
    pub draws: Vec<ModelState>,
    pub log_posterior: Vec<f64>,
    pub log_likelihood: Vec<f64>,
    pub pointwise: PointwiseAccumulator,
    /// Full per-draw pointwise matrix, kept only when `config.store_loglik`.
    pub loglik: Option<Vec<Vec<f64>>>,
    pub acceptance: AcceptanceReport,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn n_genes(&self) -> usize {
        self.draws.first().map_or(0, ModelState::n_genes)
    }
}
