//! Independent reference computations shared by the integration tests.

#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};
use statrs::function::gamma::ln_gamma;
use velocity_core::kinetics::{Position, RateParams};

/// Classical RK4 on the two-stage kinetics, starting from the OFF steady
/// state at `t0_on` and stepping exactly onto the switch-off instant.
pub fn rk4_solve(theta: &RateParams, t0_on: f64, omega: f64, t: f64, h: f64) -> Position {
    let RateParams {
        alpha_off,
        alpha_on,
        beta,
        gamma,
    } = *theta;
    let mut y = [alpha_off / beta, alpha_off / gamma];
    if t <= t0_on {
        return Position::new(y[1], y[0]);
    }
    let f = |alpha: f64, y: [f64; 2]| [alpha - beta * y[0], beta * y[0] - gamma * y[1]];
    let integrate = |alpha: f64, span: f64, y: &mut [f64; 2]| {
        let n = (span / h).ceil().max(1.0) as usize;
        let step = span / n as f64;
        for _ in 0..n {
            let k1 = f(alpha, *y);
            let k2 = f(alpha, [y[0] + 0.5 * step * k1[0], y[1] + 0.5 * step * k1[1]]);
            let k3 = f(alpha, [y[0] + 0.5 * step * k2[0], y[1] + 0.5 * step * k2[1]]);
            let k4 = f(alpha, [y[0] + step * k3[0], y[1] + step * k3[1]]);
            for i in 0..2 {
                y[i] += step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    };
    let on_span = (t - t0_on).min(omega);
    integrate(alpha_on, on_span, &mut y);
    if t - t0_on > omega {
        integrate(alpha_off, t - t0_on - omega, &mut y);
    }
    Position::new(y[1], y[0])
}

/// Negative-Binomial log-pmf with mean `mu` and size `1/eta`. Small sizes use
/// log-gamma directly; large sizes (where log-gamma differences cancel) walk
/// the pmf ratio recurrence from `P(0)`. `eta = 0` is the Poisson.
pub fn nb_logpmf_oracle(y: u32, mu: f64, eta: f64) -> f64 {
    let yf = f64::from(y);
    if eta == 0.0 {
        return yf * mu.ln() - mu - ln_gamma(yf + 1.0);
    }
    let r = 1.0 / eta;
    if r <= 1e3 {
        ln_gamma(yf + r) - ln_gamma(r) - ln_gamma(yf + 1.0) + r * (r / (r + mu)).ln() + yf * (mu / (r + mu)).ln()
    } else {
        let mut lp = -r * (mu * eta).ln_1p();
        let q = mu / (r + mu);
        for i in 0..y {
            let i = f64::from(i);
            lp += ((i + r) / (i + 1.0) * q).ln();
        }
        lp
    }
}

/// Sample mean and unbiased variance.
pub fn moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Pearson chi-square goodness-of-fit p-value of integer samples against a
/// Poisson law, pooling tail bins so every expected count is at least 5.
pub fn poisson_gof_pvalue(samples: &[u64], mean: f64) -> f64 {
    let n = samples.len() as f64;
    let law = Poisson::new(mean).unwrap();
    let max = samples.iter().copied().max().unwrap_or(0) as usize;
    let mut counts = vec![0.0; max + 2];
    for &s in samples {
        counts[s as usize] += 1.0;
    }
    // Bins [lo, hi) with expected >= 5; the last bin is the open upper tail.
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    let mut k = 0usize;
    let mut cum = 0.0;
    loop {
        let p = law.pmf(k as u64);
        obs += counts.get(k).copied().unwrap_or(0.0);
        exp += n * p;
        cum += p;
        k += 1;
        if exp >= 5.0 && n * (1.0 - cum) >= 5.0 {
            bins.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
        if n * (1.0 - cum) < 5.0 {
            break;
        }
    }
    let rest_obs: f64 = counts.iter().skip(k).sum();
    let tail = (obs + rest_obs, exp + n * (1.0 - cum));
    match bins.last_mut() {
        Some(last) if tail.1 < 5.0 => {
            last.0 += tail.0;
            last.1 += tail.1;
        }
        _ => bins.push(tail),
    }
    let stat: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = (bins.len() - 1) as f64;
    1.0 - ChiSquared::new(df).unwrap().cdf(stat)
}

/// Standard error of the sample variance of `n` Poisson draws.
pub fn poisson_variance_se(mean: f64, n: usize) -> f64 {
    // Fourth central moment of a Poisson is mean (1 + 3 mean).
    let mu4 = mean * (1.0 + 3.0 * mean);
    ((mu4 - mean * mean * (n as f64 - 3.0) / (n as f64 - 1.0)) / n as f64).sqrt()
}

/// Two-sided one-sample Kolmogorov-Smirnov p-value (asymptotic law with the
/// Stephens small-sample correction).
pub fn ks_pvalue(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = samples.to_vec();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let lam = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = f64::from(k);
        p += 2.0 * (-1.0f64).powf(k - 1.0) * (-2.0 * k * k * lam * lam).exp();
    }
    p.clamp(0.0, 1.0)
}
