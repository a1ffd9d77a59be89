use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{Almond, AlmondCoords};
use crate::kinetics::Position;

/// Splicing rate; fixed because rates and times are only identified up to a
/// common scale.
pub const BETA: f64 = 1.0;

/// Global hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Hyper {
    /// Upper bound of the steady-state coordinates.
    pub a: f64,
    /// Angular width of the steady-state sector.
    pub p: f64,
}

impl Hyper {
    pub const DEFAULT_SECTOR: f64 = PI / 2.0;

    pub fn new(a: f64, p: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidParameter(format!("bound a must be > 0, got {a}")));
        }
        if !(p > 0.0 && p < 2.0 * PI) {
            return Err(Error::InvalidParameter(format!("sector p must be in (0, 2pi), got {p}")));
        }
        Ok(Self { a, p })
    }
}

/// Gene-level parameters: steady-state coordinates and overdispersion.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeneParams {
    pub u_off: f64,
    pub u_on: f64,
    pub s_on: f64,
    pub eta: f64,
}

impl GeneParams {
    pub fn coords(&self, a: f64) -> AlmondCoords {
        AlmondCoords {
            u_off: self.u_off,
            u_on: self.u_on,
            s_on: self.s_on,
            a,
        }
    }

    pub fn s_off(&self) -> f64 {
        self.u_off * self.s_on / self.u_on
    }

    /// Degradation rate (with `beta = 1`).
    pub fn gamma(&self) -> f64 {
        BETA * self.u_on / self.s_on
    }
}

/// Full parameter state of the hierarchical model.
///
/// `u_sw` is stored group-major (`k * G + g`), `phi` subgroup-major (`r * G + g`).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelState {
    pub hyper: Hyper,
    pub genes: Vec<GeneParams>,
    pub u_sw: Vec<f64>,
    pub phi: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl ModelState {
    pub fn n_genes(&self) -> usize {
        self.genes.len()
    }

    pub fn n_groups(&self) -> usize {
        self.u_sw.len() / self.genes.len().max(1)
    }

    pub fn n_subgroups(&self) -> usize {
        self.phi.len() / self.genes.len().max(1)
    }

    pub fn n_cells(&self) -> usize {
        self.lambda.len()
    }

    #[inline]
    pub fn u_sw(&self, k: usize, g: usize) -> f64 {
        self.u_sw[k * self.genes.len() + g]
    }

    #[inline]
    pub fn phi(&self, r: usize, g: usize) -> f64 {
        self.phi[r * self.genes.len() + g]
    }

    /// Checks array sizes against a dataset.
    pub fn check_shape(&self, n_cells: usize, n_groups: usize, n_subgroups: usize) -> Result<()> {
        let g = self.genes.len();
        if self.lambda.len() != n_cells || self.u_sw.len() != n_groups * g || self.phi.len() != n_subgroups * g {
            return Err(Error::DimensionMismatch(format!(
                "state has {} cells, {} switch levels, {} angles for {g} genes; data has {n_cells} cells, {n_groups} groups, {n_subgroups} subgroups",
                self.lambda.len(),
                self.u_sw.len(),
                self.phi.len()
            )));
        }
        Ok(())
    }

    /// Switching points, group-major.
    pub fn switch_points(&self) -> Vec<Position> {
        let n_genes = self.genes.len();
        let almonds: Vec<Almond> = self.genes.iter().map(|gp| Almond::new(&gp.coords(self.hyper.a))).collect();
        self.u_sw
            .iter()
            .enumerate()
            .map(|(i, &u)| almonds[i % n_genes].switch_point(u))
            .collect()
    }

    /// Subgroup positions `(s~, u~)`, subgroup-major.
    pub fn positions(&self, group_of_subgroup: &[usize]) -> Vec<Position> {
        let n_genes = self.genes.len();
        let almonds: Vec<Almond> = self.genes.iter().map(|gp| Almond::new(&gp.coords(self.hyper.a))).collect();
        let switches = self.switch_points();
        let mut out = Vec::with_capacity(self.phi.len());
        for (r, &k) in group_of_subgroup.iter().enumerate() {
            for g in 0..n_genes {
                let sw = switches[k * n_genes + g];
                out.push(almonds[g].position(self.phi[r * n_genes + g], self.hyper.p, sw));
            }
        }
        out
    }

    /// Subgroup velocities `u~ - gamma s~`, subgroup-major.
    pub fn velocities(&self, group_of_subgroup: &[usize]) -> Vec<f64> {
        let n_genes = self.genes.len();
        self.positions(group_of_subgroup)
            .iter()
            .enumerate()
            .map(|(i, pos)| crate::kinetics::velocity(*pos, BETA, self.genes[i % n_genes].gamma()))
            .collect()
    }
}

/// Rescales a draw so that the capture efficiencies average to one, scaling
/// every coordinate by the same factor. The likelihood is unchanged.
pub fn rescale_capture(draw: &ModelState) -> ModelState {
    let m = draw.lambda.iter().sum::<f64>() / draw.lambda.len() as f64;
    scale_capture(draw, m)
}

/// Divides every capture efficiency by `factor` and multiplies the
/// coordinates by it.
pub fn scale_capture(draw: &ModelState, factor: f64) -> ModelState {
    let mut out = draw.clone();
    for l in &mut out.lambda {
        *l /= factor;
    }
    for gp in &mut out.genes {
        gp.u_off *= factor;
        gp.u_on *= factor;
        gp.s_on *= factor;
    }
    for u in &mut out.u_sw {
        *u *= factor;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> ModelState {
        ModelState {
            hyper: Hyper::new(50.0, Hyper::DEFAULT_SECTOR).unwrap(),
            genes: vec![GeneParams {
                u_off: 1.0,
                u_on: 8.0,
                s_on: 10.0,
                eta: 0.3,
            }],
            u_sw: vec![5.0],
            phi: vec![1.0, 5.5],
            lambda: vec![0.5, 0.5, 0.5],
        }
    }

    #[test]
    fn rescale_to_unit_mean() {
        let out = rescale_capture(&state());
        assert_eq!(out.lambda, vec![1.0; 3]);
        assert_eq!((out.genes[0].u_off, out.genes[0].u_on, out.genes[0].s_on), (0.5, 4.0, 5.0));
        assert_eq!(out.u_sw, vec![2.5]);
        assert_eq!(out.phi, state().phi);
    }

    #[test]
    fn unit_mean_is_identity() {
        let mut s = state();
        s.lambda = vec![0.5, 1.5, 1.0];
        assert_eq!(rescale_capture(&s), s);
    }

    #[test]
    fn sector_position_is_off_state() {
        let s = state();
        let pos = s.positions(&[0, 0]);
        assert_eq!(pos[1], Position::new(1.0 * 10.0 / 8.0, 1.0));
    }
}
