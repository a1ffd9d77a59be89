//! Proposal adaptation.
//!
//! Both adapters use the gain `Gamma_k = c1 / (k + c2)`. The multivariate one
//! follows the global-scale adaptive Metropolis scheme (running mean,
//! running covariance, log-scale driven by the acceptance probability); the
//! univariate one nudges a log standard deviation by the windowed acceptance
//! rate.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Diminishing adaptation gain `c1 / (k + c2)`.
#[inline]
pub fn adapt_gain(k: usize, c1: f64, c2: f64) -> f64 {
    c1 / (k as f64 + c2)
}

/// Robbins-Monro step on a log standard deviation.
#[inline]
pub fn adapt_univariate(window_rate: f64, log_sd: f64, gain: f64, target: f64) -> f64 {
    log_sd + gain * (window_rate - target)
}

/// Random-walk scale of a univariate block with its acceptance counters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AdaptiveScale {
    pub log_sd: f64,
    window_accepted: u32,
    window_total: u32,
}

impl AdaptiveScale {
    pub fn new(sd: f64) -> Self {
        Self {
            log_sd: sd.ln(),
            window_accepted: 0,
            window_total: 0,
        }
    }

    #[inline]
    pub fn sd(&self) -> f64 {
        self.log_sd.exp()
    }

    #[inline]
    pub fn record(&mut self, accepted: bool) {
        self.window_total += 1;
        self.window_accepted += u32::from(accepted);
    }

    /// Window acceptance rate, or `None` for an empty window.
    pub fn window_rate(&self) -> Option<f64> {
        (self.window_total > 0).then(|| f64::from(self.window_accepted) / f64::from(self.window_total))
    }

    /// Applies one adaptation step (when `adapt`) and starts a new window.
    pub fn end_window(&mut self, adapt: bool, gain: f64, target: f64) {
        if adapt {
            if let Some(rate) = self.window_rate() {
                self.log_sd = adapt_univariate(rate, self.log_sd, gain, target);
            }
        }
        self.window_accepted = 0;
        self.window_total = 0;
    }
}

/// Adaptive multivariate normal random-walk proposal in `D` dimensions.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AdaptiveMvn<const D: usize> {
    #[serde(with = "serde_arrays")]
    mean: [f64; D],
    #[serde(with = "serde_matrix")]
    cov: [[f64; D]; D],
    log_scale: f64,
    eps: f64,
    #[serde(with = "serde_matrix")]
    chol: [[f64; D]; D],
}

impl<const D: usize> AdaptiveMvn<D> {
    /// Starts from `mean` with covariance `sd^2 I` and unit global scale.
    pub fn new(mean: [f64; D], sd: f64, eps: f64) -> Self {
        let mut cov = [[0.0; D]; D];
        for (i, row) in cov.iter_mut().enumerate() {
            row[i] = sd * sd;
        }
        let mut out = Self {
            mean,
            cov,
            log_scale: 0.0,
            eps,
            chol: [[0.0; D]; D],
        };
        out.refresh();
        out
    }

    /// `exp(log_scale) * cov + eps * I`.
    pub fn proposal_cov(&self) -> [[f64; D]; D] {
        let scale = self.log_scale.exp();
        let mut out = self.cov;
        for (i, row) in out.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v *= scale;
            }
            row[i] += self.eps;
        }
        out
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    fn refresh(&mut self) {
        let cov = self.proposal_cov();
        match cholesky(&cov) {
            Some(l) => self.chol = l,
            None => {
                // Fall back to the diagonal if rounding broke positive definiteness.
                let mut l = [[0.0; D]; D];
                for i in 0..D {
                    l[i][i] = cov[i][i].max(self.eps).sqrt();
                }
                self.chol = l;
            }
        }
    }

    pub fn propose<R: Rng + ?Sized>(&self, x: &[f64; D], rng: &mut R) -> [f64; D] {
        let mut z = [0.0; D];
        for zi in &mut z {
            *zi = rng.sample(StandardNormal);
        }
        let mut out = *x;
        for i in 0..D {
            for j in 0..=i {
                out[i] += self.chol[i][j] * z[j];
            }
        }
        out
    }

    /// One adaptation step after the chain moved to `x` with acceptance probability `alpha`.
    pub fn adapt(&mut self, x: &[f64; D], alpha: f64, gain: f64, target: f64) {
        let mut dev = [0.0; D];
        for i in 0..D {
            dev[i] = x[i] - self.mean[i];
        }
        for i in 0..D {
            self.mean[i] += gain * dev[i];
            for j in 0..D {
                self.cov[i][j] += gain * (dev[i] * dev[j] - self.cov[i][j]);
            }
        }
        self.log_scale += gain * (alpha - target);
        self.refresh();
    }
}

fn cholesky<const D: usize>(a: &[[f64; D]; D]) -> Option<[[f64; D]; D]> {
    let mut l = [[0.0; D]; D];
    for i in 0..D {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(sum > 0.0) {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

mod serde_arrays {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, const D: usize>(v: &[f64; D], s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, De: Deserializer<'de>, const D: usize>(d: De) -> Result<[f64; D], De::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        v.try_into()
            .map_err(|_| serde::de::Error::custom("wrong array length"))
    }
}

mod serde_matrix {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, const D: usize>(v: &[[f64; D]; D], s: S) -> Result<S::Ok, S::Error> {
        let flat: Vec<f64> = v.iter().flatten().copied().collect();
        flat.serialize(s)
    }

    pub fn deserialize<'de, De: Deserializer<'de>, const D: usize>(d: De) -> Result<[[f64; D]; D], De::Error> {
        let flat = Vec::<f64>::deserialize(d)?;
        if flat.len() != D * D {
            return Err(serde::de::Error::custom("wrong matrix size"));
        }
        let mut out = [[0.0; D]; D];
        for (i, row) in out.iter_mut().enumerate() {
            row.copy_from_slice(&flat[i * D..(i + 1) * D]);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gain_schedule() {
        assert!((adapt_gain(30_000, 2500.0, 20_000.0) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn univariate_step() {
        assert_eq!(adapt_univariate(0.25, -1.3, 0.05, 0.25), -1.3);
        assert!((adapt_univariate(1.0, 0.0, 0.05, 0.25) - 0.0375).abs() < 1e-15);
    }

    #[test]
    fn scale_window_resets() {
        let mut s = AdaptiveScale::new(1.0);
        s.record(true);
        s.record(false);
        assert_eq!(s.window_rate(), Some(0.5));
        s.end_window(true, 0.1, 0.25);
        assert!((s.log_sd - 0.025).abs() < 1e-15);
        assert_eq!(s.window_rate(), None);
        s.end_window(true, 0.1, 0.25);
        assert!((s.log_sd - 0.025).abs() < 1e-15);
    }

    #[test]
    fn learns_covariance() {
        // Feed draws from a known correlated Gaussian straight into the adapter.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mvn = AdaptiveMvn::<2>::new([0.0, 0.0], 1.0, 1e-10);
        for k in 1..200_000 {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let x = [2.0 * z1, z1 + 0.5 * z2];
            mvn.adapt(&x, 0.25, 1.0 / (k as f64 + 100.0).sqrt() * 0.05, 0.25);
        }
        let c = mvn.cov;
        assert!((c[0][0] - 4.0).abs() < 0.4, "{c:?}");
        assert!((c[0][1] - 2.0).abs() < 0.3, "{c:?}");
        assert!((c[1][1] - 1.25).abs() < 0.15, "{c:?}");
    }

    #[test]
    fn proposal_uses_cholesky() {
        let mvn = AdaptiveMvn::<3>::new([0.0; 3], 0.5, 0.0);
        let cov = mvn.proposal_cov();
        assert!((cov[1][1] - 0.25).abs() < 1e-15 && cov[0][1] == 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 50_000;
        let mut ss = 0.0;
        for _ in 0..n {
            let y = mvn.propose(&[1.0, 2.0, 3.0], &mut rng);
            ss += (y[2] - 3.0).powi(2);
        }
        assert!((ss / n as f64 - 0.25).abs() < 0.01);
    }
}
