//! Closed-form solution of the transcription / splicing / degradation ODE
//!
//! ```text
//! du/dt = alpha(t) - beta * u
//! ds/dt = beta * u - gamma * s
//! ```
//!
//! with a piecewise-constant transcription rate that is `alpha_off` before the
//! ON phase starts at `t0_on`, `alpha_on` for a duration `omega`, and
//! `alpha_off` afterwards. The system starts at the OFF steady state.

use crate::error::{Error, Result};

/// Relative tolerance on `|gamma - beta| / beta` below which the equal-rate
/// limit of the solution is used.
pub const EQUAL_RATE_TOL: f64 = 1e-8;

/// Kinetic rates of a single gene.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RateParams {
    pub alpha_off: f64,
    pub alpha_on: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl RateParams {
    pub fn new(alpha_off: f64, alpha_on: f64, beta: f64, gamma: f64) -> Result<Self> {
        let theta = Self {
            alpha_off,
            alpha_on,
            beta,
            gamma,
        };
        theta.validate()?;
        Ok(theta)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.alpha_off, self.alpha_on, self.beta, self.gamma]
            .iter()
            .all(|x| x.is_finite());
        if !all_finite {
            return Err(Error::InvalidParameter("rates must be finite".into()));
        }
        if self.alpha_off < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "alpha_off must be >= 0, got {}",
                self.alpha_off
            )));
        }
        if self.alpha_on <= self.alpha_off {
            return Err(Error::InvalidParameter(format!(
                "alpha_on ({}) must exceed alpha_off ({})",
                self.alpha_on, self.alpha_off
            )));
        }
        if self.beta <= 0.0 || self.gamma <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "beta and gamma must be > 0, got beta={} gamma={}",
                self.beta, self.gamma
            )));
        }
        Ok(())
    }

    /// Multiplies every rate by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            alpha_off: self.alpha_off * factor,
            alpha_on: self.alpha_on * factor,
            beta: self.beta * factor,
            gamma: self.gamma * factor,
        }
    }
}

/// A point in the (spliced, unspliced) plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Position {
    pub s: f64,
    pub u: f64,
}

impl Position {
    pub const fn new(s: f64, u: f64) -> Self {
        Self { s, u }
    }

    pub fn dist(&self, other: &Position) -> f64 {
        (self.s - other.s).hypot(self.u - other.u)
    }
}

/// `(exp(-gamma tau) - exp(-beta tau)) / (gamma - beta)`, switching to the
/// limit `-tau exp(-beta tau)` when the two rates coincide.
#[inline]
fn exp_diff_ratio_with(beta: f64, gamma: f64, tau: f64, force_limit: bool) -> f64 {
    let d = gamma - beta;
    if force_limit || d.abs() < beta * EQUAL_RATE_TOL {
        -tau * (-beta * tau).exp()
    } else if (d * tau).abs() < 1.0 {
        (-beta * tau).exp() * (-d * tau).exp_m1() / d
    } else {
        ((-gamma * tau).exp() - (-beta * tau).exp()) / d
    }
}

/// Position along the ON branch after `tau >= 0` units of ON time.
fn on_branch(tau: f64, theta: &RateParams, force_limit: bool) -> Position {
    let RateParams {
        alpha_off,
        alpha_on,
        beta,
        gamma,
    } = *theta;
    let u = alpha_off / beta * (-beta * tau).exp() - alpha_on / beta * (-beta * tau).exp_m1();
    let s = alpha_off / gamma * (-gamma * tau).exp() - alpha_on / gamma * (-gamma * tau).exp_m1()
        + (alpha_on - alpha_off) * exp_diff_ratio_with(beta, gamma, tau, force_limit);
    Position { s, u }
}

/// Position along the OFF branch, `tau >= 0` time units after switching from `start`.
fn off_branch(tau: f64, start: Position, theta: &RateParams, force_limit: bool) -> Position {
    let RateParams {
        alpha_off,
        beta,
        gamma,
        ..
    } = *theta;
    let u = start.u * (-beta * tau).exp() - alpha_off / beta * (-beta * tau).exp_m1();
    let s = start.s * (-gamma * tau).exp() - alpha_off / gamma * (-gamma * tau).exp_m1()
        + (alpha_off - beta * start.u) * exp_diff_ratio_with(beta, gamma, tau, force_limit);
    Position { s, u }
}

fn check_inputs(t: f64, t0_on: f64, omega: f64, theta: &RateParams) -> Result<()> {
    theta.validate()?;
    if !t.is_finite() || !t0_on.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "t and t0_on must be finite, got t={t} t0_on={t0_on}"
        )));
    }
    if omega.is_nan() || omega <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "omega must be > 0, got {omega}"
        )));
    }
    Ok(())
}

/// Solves the ODE at time `t` for an ON phase starting at `t0_on` and lasting
/// `omega` (which may be `f64::INFINITY`).
pub fn solve(t: f64, t0_on: f64, omega: f64, theta: &RateParams) -> Result<Position> {
    check_inputs(t, t0_on, omega, theta)?;
    Ok(solve_elapsed(t - t0_on, omega, theta))
}

/// Same as [`solve`] but in terms of the elapsed time `t - t0_on`; this is the
/// only combination of `t` and `t0_on` the solution depends on. `elapsed` may
/// be `+inf`.
pub fn solve_elapsed(elapsed: f64, omega: f64, theta: &RateParams) -> Position {
    solve_elapsed_with(elapsed, omega, theta, false)
}

/// Evaluates the solution with the equal-rate coupling term regardless of
/// how far apart `beta` and `gamma` are.
pub fn solve_elapsed_equal_rate(elapsed: f64, omega: f64, theta: &RateParams) -> Position {
    solve_elapsed_with(elapsed, omega, theta, true)
}

fn solve_elapsed_with(elapsed: f64, omega: f64, theta: &RateParams, force_limit: bool) -> Position {
    if elapsed < 0.0 {
        return Position::new(theta.alpha_off / theta.gamma, theta.alpha_off / theta.beta);
    }
    if omega.is_infinite() || elapsed <= omega {
        if elapsed.is_infinite() {
            return Position::new(theta.alpha_on / theta.gamma, theta.alpha_on / theta.beta);
        }
        return on_branch(elapsed, theta, force_limit);
    }
    let start = on_branch(omega, theta, force_limit);
    if elapsed.is_infinite() {
        return Position::new(theta.alpha_off / theta.gamma, theta.alpha_off / theta.beta);
    }
    off_branch(elapsed - omega, start, theta, force_limit)
}

/// OFF and ON steady states `(alpha/gamma, alpha/beta)`.
pub fn steady_states(theta: &RateParams) -> Result<(Position, Position)> {
    theta.validate()?;
    Ok((
        Position::new(theta.alpha_off / theta.gamma, theta.alpha_off / theta.beta),
        Position::new(theta.alpha_on / theta.gamma, theta.alpha_on / theta.beta),
    ))
}

/// Where the trajectory leaves the ON branch. Independent of `t0_on`.
pub fn switching_point(omega: f64, t0_on: f64, theta: &RateParams) -> Result<Position> {
    solve(t0_on + omega, t0_on, omega, theta)
}

/// RNA velocity `ds/dt = beta u - gamma s`.
#[inline]
pub fn velocity(pos: Position, beta: f64, gamma: f64) -> f64 {
    beta * pos.u - gamma * pos.s
}
