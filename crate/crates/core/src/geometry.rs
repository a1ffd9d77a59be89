//! Working coordinates for the kinetic model.
//!
//! Instead of rates and times the sampler works with points of the (s, u)
//! plane: the steady-state coordinates `(u_off, u_on, s_on)`, the u-coordinate
//! of the switching point `u_sw`, and an angle `phi` in `[0, 2 pi]` that walks
//! the ON branch on `[0, h)`, the OFF branch on `[h, 2h)` and sits at the OFF
//! steady state on the sector `[2h, 2 pi]`, where `h = (2 pi - p) / 2`.
//!
//! Along either branch the quantity `x = exp(-beta * tau)` is linear in `u`,
//! which makes `u` linear in `phi` and gives `s` in closed form through
//! `x^(gamma / beta)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::kinetics::{Position, RateParams, EQUAL_RATE_TOL};

pub const TWO_PI: f64 = 2.0 * PI;

/// Steady-state coordinates of one gene plus the upper bound `a`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AlmondCoords {
    pub u_off: f64,
    pub u_on: f64,
    pub s_on: f64,
    pub a: f64,
}

impl AlmondCoords {
    pub fn new(u_off: f64, u_on: f64, s_on: f64, a: f64) -> Result<Self> {
        let c = Self {
            u_off,
            u_on,
            s_on,
            a,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn is_valid(&self) -> bool {
        let Self {
            u_off,
            u_on,
            s_on,
            a,
        } = *self;
        a.is_finite() && 0.0 <= u_off && u_off < u_on && u_on <= a && 0.0 < s_on && s_on <= a
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "coordinates violate 0 <= u_off < u_on <= a, 0 < s_on <= a: {self:?}"
            )))
        }
    }

    /// `sigma_off = u_off * s_on / u_on`.
    pub fn s_off(&self) -> f64 {
        self.u_off * self.s_on / self.u_on
    }

    /// Degradation rate implied by the coordinates.
    pub fn gamma(&self, beta: f64) -> f64 {
        beta * self.u_on / self.s_on
    }

    pub fn off_state(&self) -> Position {
        Position::new(self.s_off(), self.u_off)
    }

    pub fn on_state(&self) -> Position {
        Position::new(self.s_on, self.u_on)
    }
}

/// Converts steady-state coordinates back to rates; also returns `sigma_off`.
pub fn coords_to_rates(c: &AlmondCoords, beta: f64) -> Result<(RateParams, f64)> {
    if c.s_on == 0.0 {
        return Err(Error::InvalidParameter("s_on must be > 0".into()));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("beta must be > 0, got {beta}")));
    }
    let gamma = c.gamma(beta);
    let theta = RateParams::new(beta * c.u_off, beta * c.u_on, beta, gamma)?;
    Ok((theta, theta.alpha_off / gamma))
}

/// ON duration that makes the trajectory switch at unspliced level `u_sw`.
pub fn switching_u_to_omega(u_sw: f64, c: &AlmondCoords, beta: f64) -> Result<f64> {
    if !(c.u_off < u_sw && u_sw < c.u_on) {
        return Err(Error::InvalidParameter(format!(
            "switching level {u_sw} outside ({}, {})",
            c.u_off, c.u_on
        )));
    }
    Ok(omega_from_fraction(switch_fraction(u_sw, c), beta))
}

#[inline]
fn switch_fraction(u_sw: f64, c: &AlmondCoords) -> f64 {
    (u_sw - c.u_off) / (c.u_on - c.u_off)
}

#[inline]
fn omega_from_fraction(frac: f64, beta: f64) -> f64 {
    -(-frac).ln_1p() / beta
}

/// Angular coordinate together with the width `p` of the steady-state sector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularPosition {
    pub phi: f64,
    pub p: f64,
}

impl AngularPosition {
    pub fn new(phi: f64, p: f64) -> Result<Self> {
        if !(0.0..=TWO_PI).contains(&phi) {
            return Err(Error::InvalidParameter(format!("phi {phi} outside [0, 2pi]")));
        }
        check_sector(p)?;
        Ok(Self { phi, p })
    }

    /// Half of the non-sector arc: length of each branch in angle.
    #[inline]
    pub fn half_arc(&self) -> f64 {
        half_arc(self.p)
    }
}

fn check_sector(p: f64) -> Result<()> {
    if p > 0.0 && p < TWO_PI {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("sector width {p} outside (0, 2pi)")))
    }
}

#[inline]
pub fn half_arc(p: f64) -> f64 {
    (TWO_PI - p) / 2.0
}

/// Which part of the almond an angle falls on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Branch {
    /// ON branch with fraction `f` in `[0, 1)` of the way to the switch.
    On(f64),
    /// OFF branch with fraction `f` in `[0, 1)` of the way back.
    Off(f64),
    Sector,
}

#[inline]
pub fn branch_of(phi: f64, p: f64) -> Branch {
    let h = half_arc(p);
    if phi < h {
        Branch::On(phi / h)
    } else if phi < 2.0 * h {
        Branch::Off((phi - h) / h)
    } else {
        Branch::Sector
    }
}

/// Precomputed per-gene quantities for evaluating positions on the almond.
#[derive(Debug, Clone, Copy)]
pub struct Almond {
    pub u_off: f64,
    pub u_on: f64,
    pub s_on: f64,
    pub s_off: f64,
    /// gamma / beta
    ratio: f64,
}

impl Almond {
    pub fn new(c: &AlmondCoords) -> Self {
        // beta cancels from every expression that follows.
        Self {
            u_off: c.u_off,
            u_on: c.u_on,
            s_on: c.s_on,
            s_off: c.s_off(),
            ratio: c.u_on / c.s_on,
        }
    }

    /// `x * (x^(ratio - 1) - 1) / (ratio - 1)`, i.e. `(x^ratio - x) / (ratio - 1)`
    /// with its `x ln x` limit.
    #[inline]
    fn power_gap(&self, x: f64) -> f64 {
        let d = self.ratio - 1.0;
        let lx = x.ln();
        if d.abs() < EQUAL_RATE_TOL {
            x * lx
        } else if (d * lx).abs() < 1.0 {
            x * (d * lx).exp_m1() / d
        } else {
            ((self.ratio * lx).exp() - x) / d
        }
    }

    /// ON-branch position where `x = exp(-beta tau)`, `x` in `(0, 1]`.
    #[inline]
    pub fn on_at(&self, x: f64) -> Position {
        let span = self.u_on - self.u_off;
        let u = self.u_on - span * x;
        if x <= 0.0 {
            return Position::new(self.s_on, u);
        }
        let s = self.s_on + (self.s_off - self.s_on) * x.powf(self.ratio) + span * self.power_gap(x);
        Position::new(s, u)
    }

    /// OFF-branch position `exp(-beta tau') = x` after switching at `sw`.
    #[inline]
    pub fn off_at(&self, x: f64, sw: Position) -> Position {
        let u = self.u_off + (sw.u - self.u_off) * x;
        if x <= 0.0 {
            return Position::new(self.s_off, u);
        }
        let s = self.s_off
            + (sw.s - self.s_off) * x.powf(self.ratio)
            + (self.u_off - sw.u) * self.power_gap(x);
        Position::new(s, u)
    }

    /// Switching point for unspliced level `u_sw`.
    #[inline]
    pub fn switch_point(&self, u_sw: f64) -> Position {
        let x = (self.u_on - u_sw) / (self.u_on - self.u_off);
        let mut p = self.on_at(x);
        p.u = u_sw;
        p
    }

    /// Position for angle `phi` given the switching point `sw`.
    #[inline]
    pub fn position(&self, phi: f64, p: f64, sw: Position) -> Position {
        match branch_of(phi, p) {
            Branch::On(f) => {
                let mut pos = self.on_at(1.0 - f * (sw.u - self.u_off) / (self.u_on - self.u_off));
                pos.u = self.u_off + f * (sw.u - self.u_off);
                pos
            }
            Branch::Off(f) => {
                let mut pos = self.off_at(1.0 - f, sw);
                pos.u = sw.u + f * (self.u_off - sw.u);
                pos
            }
            Branch::Sector => self.off_state(),
        }
    }

    pub fn off_state(&self) -> Position {
        Position::new(self.s_off, self.u_off)
    }
}

fn check_geometry(ap: &AngularPosition, u_sw: f64, c: &AlmondCoords, beta: f64) -> Result<()> {
    c.validate()?;
    check_sector(ap.p)?;
    if !(0.0..=TWO_PI).contains(&ap.phi) {
        return Err(Error::InvalidParameter(format!("phi {} outside [0, 2pi]", ap.phi)));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("beta must be > 0, got {beta}")));
    }
    if !(c.u_off < u_sw && u_sw < c.u_on) {
        return Err(Error::InvalidParameter(format!(
            "switching level {u_sw} outside ({}, {})",
            c.u_off, c.u_on
        )));
    }
    Ok(())
}

/// Maps an angle to its (s, u) position.
pub fn phi_to_position(
    ap: &AngularPosition,
    u_sw: f64,
    c: &AlmondCoords,
    beta: f64,
) -> Result<Position> {
    check_geometry(ap, u_sw, c, beta)?;
    let almond = Almond::new(c);
    Ok(almond.position(ap.phi, ap.p, almond.switch_point(u_sw)))
}

/// Elapsed ON time `t - t0_on` at which the trajectory passes the position of
/// `ap`. The steady-state sector maps to `+inf`.
pub fn position_to_time(
    ap: &AngularPosition,
    u_sw: f64,
    c: &AlmondCoords,
    beta: f64,
) -> Result<f64> {
    check_geometry(ap, u_sw, c, beta)?;
    let frac = switch_fraction(u_sw, c);
    Ok(match branch_of(ap.phi, ap.p) {
        Branch::On(f) => -(-f * frac).ln_1p() / beta,
        Branch::Off(f) => omega_from_fraction(frac, beta) - (-f).ln_1p() / beta,
        Branch::Sector => f64::INFINITY,
    })
}

/// Inverse of [`position_to_time`]: the angle reached after `elapsed` units of
/// time. Negative elapsed times sit at the OFF steady state (angle 0);
/// `+inf` maps to the middle of the sector.
pub fn time_to_phi(elapsed: f64, u_sw: f64, c: &AlmondCoords, beta: f64, p: f64) -> Result<f64> {
    check_sector(p)?;
    let omega = switching_u_to_omega(u_sw, c, beta)?;
    let h = half_arc(p);
    if elapsed.is_nan() {
        return Err(Error::InvalidParameter("elapsed time is NaN".into()));
    }
    if elapsed <= 0.0 {
        return Ok(0.0);
    }
    if elapsed.is_infinite() {
        return Ok(TWO_PI - p / 2.0);
    }
    let frac = switch_fraction(u_sw, c);
    let phi = if elapsed <= omega {
        h * (-(-beta * elapsed).exp_m1() / frac).min(1.0)
    } else {
        h * (1.0 + -(-beta * (elapsed - omega)).exp_m1())
    };
    // Very late times round onto the sector boundary; keep them on the branch.
    let limit = 2.0 * h;
    Ok(if phi >= limit { f64::from_bits(limit.to_bits() - 1) } else { phi })
}

/// Distribution of the elapsed time induced by `phi ~ U(0, 2 pi)` for a gene
/// with switching time `omega`: an atom at the steady state (represented at
/// `t = +inf`, the same value [`position_to_time`] returns there), a truncated
/// exponential on `(0, omega)` and a shifted exponential on `[omega, inf)`.
#[derive(Debug, Clone, Copy)]
pub struct InducedTimePrior {
    pub omega: f64,
    pub beta: f64,
    pub p: f64,
}

impl InducedTimePrior {
    pub fn new(omega: f64, beta: f64, p: f64) -> Result<Self> {
        check_sector(p)?;
        if omega.is_nan() || omega <= 0.0 || !(beta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need omega > 0 and beta > 0, got omega={omega} beta={beta}"
            )));
        }
        Ok(Self { omega, beta, p })
    }

    /// Probability of the steady-state atom, `p / (2 pi)`.
    pub fn atom_mass(&self) -> f64 {
        self.p / TWO_PI
    }

    /// Mass of each branch.
    pub fn branch_mass(&self) -> f64 {
        (1.0 - self.atom_mass()) / 2.0
    }

    /// Density of the continuous part at finite `t`.
    pub fn density(&self, t: f64) -> f64 {
        let w = self.branch_mass();
        let b = self.beta;
        if t < 0.0 {
            0.0
        } else if t < self.omega {
            w * b * (-b * t).exp() / -(-b * self.omega).exp_m1()
        } else if self.omega.is_finite() {
            w * b * (-b * (t - self.omega)).exp()
        } else {
            0.0
        }
    }

    /// `P(T <= t)` for finite `t`; excludes the atom at infinity.
    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let w = self.branch_mass();
        let b = self.beta;
        let on = -(-b * t.min(self.omega)).exp_m1() / -(-b * self.omega).exp_m1();
        let off = if t > self.omega {
            -(-b * (t - self.omega)).exp_m1()
        } else {
            0.0
        };
        w * (on + off)
    }
}

/// Log of the induced prior on the elapsed time: the log-density for finite
/// `t >= 0` and the log-mass of the steady-state atom for `t = +inf`.
pub fn induced_time_logpdf(t: f64, omega: f64, beta: f64, p: f64) -> f64 {
    let Ok(prior) = InducedTimePrior::new(omega, beta, p) else {
        return f64::NAN;
    };
    if t.is_infinite() && t > 0.0 {
        prior.atom_mass().ln()
    } else {
        prior.density(t).ln()
    }
}

/// Log-density of the switching time induced by a uniform switching level:
/// exponential with rate `beta`.
pub fn induced_omega_logpdf(omega: f64, beta: f64) -> f64 {
    if omega < 0.0 {
        f64::NEG_INFINITY
    } else {
        beta.ln() - beta * omega
    }
}
