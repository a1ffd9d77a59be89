//! Synthetic data: ground-truth parameters, Negative-Binomial counts,
//! Independent-Normal and Deming-residual continuous data, and an exact
//! stochastic simulator of the underlying birth-death process.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{position_to_time, time_to_phi, AngularPosition, TWO_PI};
use crate::kinetics::{solve_elapsed, Position, RateParams};
use crate::model::{CountMatrix, Dataset, GeneParams, Hyper, ModelState, BETA, POISSON_ETA};
use crate::stats::quantile;

/// Shape of a simulated experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n_genes: usize,
    pub n_cells: usize,
    pub n_groups: usize,
    pub n_subgroups: usize,
    /// Number of shared time centres per gene when there is a single group;
    /// with several groups each group is its own centre.
    pub n_levels: usize,
    pub seed: u64,
    pub sector: f64,
    /// Variance of subgroup times around their centre.
    pub time_variance: f64,
}

impl Scenario {
    pub fn new(n_genes: usize, n_cells: usize, n_groups: usize, n_subgroups: usize, n_levels: usize, seed: u64) -> Result<Self> {
        let s = Self {
            n_genes,
            n_cells,
            n_groups,
            n_subgroups,
            n_levels,
            seed,
            sector: Hyper::DEFAULT_SECTOR,
            time_variance: 0.5,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_genes == 0 || self.n_groups == 0 {
            return bad("need at least one gene and one group".into());
        }
        if !self.n_subgroups.is_multiple_of(self.n_groups) {
            return bad(format!("{} subgroups do not split evenly into {} groups", self.n_subgroups, self.n_groups));
        }
        if self.n_cells < self.n_subgroups {
            return bad(format!("{} cells cannot fill {} subgroups", self.n_cells, self.n_subgroups));
        }
        if self.n_groups == 1 && (self.n_levels == 0 || !self.n_subgroups.is_multiple_of(self.n_levels)) {
            return bad(format!("{} subgroups do not split evenly into {} levels", self.n_subgroups, self.n_levels));
        }
        if !(self.time_variance >= 0.0) {
            return bad("time variance must be nonnegative".into());
        }
        Hyper::new(1.0, self.sector).map(|_| ())
    }

    /// Subgroup of cell `c`: cells are split into contiguous, near-equal blocks.
    pub fn subgroup_of_cell(&self, c: usize) -> usize {
        c * self.n_subgroups / self.n_cells
    }

    pub fn group_of_subgroup(&self, r: usize) -> usize {
        r * self.n_groups / self.n_subgroups
    }

    fn level_of_subgroup(&self, r: usize) -> usize {
        if self.n_groups > 1 {
            self.group_of_subgroup(r)
        } else {
            r * self.n_levels / self.n_subgroups
        }
    }

    fn n_time_levels(&self) -> usize {
        if self.n_groups > 1 {
            self.n_groups
        } else {
            self.n_levels
        }
    }
}

/// Equi-spaced switching-time grid: multiples of `-ln 0.7` (so the first
/// point sits 30% of the way up the ON branch), at most 20 of them, keeping
/// those whose unspliced level stays more than 0.5% of the range below the
/// ON steady state.
pub fn omega_grid() -> Vec<f64> {
    let w1 = -(0.7f64).ln();
    let grid: Vec<f64> = (1..=20)
        .map(|i| f64::from(i) * w1)
        .filter(|w| (-w).exp() > 0.005)
        .collect();
    assert!(!grid.is_empty(), "switching-time grid is empty");
    grid
}

/// Ground truth of a simulated experiment.
///
/// `state` holds the model parameters after capture normalisation; `rates`
/// are the matching (rescaled) kinetic rates. Per-(k, g) quantities are
/// stored `k * G + g`, per-(r, g) ones `r * G + g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub scenario: Scenario,
    pub state: ModelState,
    pub rates: Vec<RateParams>,
    pub omega: Vec<f64>,
    /// Subgroup times per `(r, g)`; `+inf` at the OFF steady state.
    #[serde(with = "extended_reals")]
    pub t_tilde: Vec<f64>,
    pub positions: Vec<Position>,
    pub group_of_cell: Vec<usize>,
    pub subgroup_of_cell: Vec<usize>,
    pub group_of_subgroup: Vec<usize>,
}

impl SimulationTruth {
    pub fn velocities(&self) -> Vec<f64> {
        let n_genes = self.scenario.n_genes;
        self.positions
            .iter()
            .enumerate()
            .map(|(i, p)| crate::kinetics::velocity(*p, BETA, self.rates[i % n_genes].gamma))
            .collect()
    }

    /// Subgroup position of cell `c` for gene `g`.
    pub fn cell_position(&self, c: usize, g: usize) -> Position {
        self.positions[self.subgroup_of_cell[c] * self.scenario.n_genes + g]
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const CELL_STREAM: u64 = 1 << 40;
const COUNT_STREAM: u64 = 2 << 40;
const NOISE_STREAM: u64 = 3 << 40;

struct GeneDraw {
    rates: RateParams,
    eta: f64,
    omega: Vec<f64>,
    t_tilde: Vec<f64>,
}

fn draw_gene(sc: &Scenario, g: usize, grid: &[f64]) -> Result<GeneDraw> {
    let mut rng = rng_for(sc.seed, g as u64);
    let alpha_off = rng.random_range(1.0..5.0);
    let alpha_on = rng.random_range(6.0..10.0);
    let gamma = rng.random_range(0.5..1.5);
    let eta = rng.random_range(0.5..1.0);
    let rates = RateParams::new(alpha_off, alpha_on, BETA, gamma)?;
    let omega: Vec<f64> = (0..sc.n_groups).map(|_| grid[rng.random_range(0..grid.len())]).collect();

    let s_on = alpha_on / gamma;
    let coords = crate::geometry::AlmondCoords::new(alpha_off, alpha_on, s_on, 2.0 * alpha_on.max(s_on))?;
    // Time centres from the induced prior: a uniform angle mapped to its time.
    let level_group: Vec<usize> = (0..sc.n_time_levels())
        .map(|l| {
            let r = (0..sc.n_subgroups).find(|&r| sc.level_of_subgroup(r) == l).expect("every level has a subgroup");
            sc.group_of_subgroup(r)
        })
        .collect();
    let mut mu = Vec::with_capacity(level_group.len());
    for &k in &level_group {
        let phi = rng.random_range(0.0..TWO_PI);
        let u_sw = switch_level(&rates, omega[k]);
        mu.push(position_to_time(&AngularPosition::new(phi, sc.sector)?, u_sw, &coords, BETA)?);
    }
    let spread = Normal::new(0.0, sc.time_variance.sqrt()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let t_tilde = (0..sc.n_subgroups)
        .map(|r| {
            let z = mu[sc.level_of_subgroup(r)] + spread.sample(&mut rng);
            z.max(0.0)
        })
        .collect();
    Ok(GeneDraw {
        rates,
        eta,
        omega,
        t_tilde,
    })
}

fn switch_level(rates: &RateParams, omega: f64) -> f64 {
    let (u_off, u_on) = (rates.alpha_off / rates.beta, rates.alpha_on / rates.beta);
    u_on - (u_on - u_off) * (-rates.beta * omega).exp()
}

/// Samples a full ground truth.
pub fn gen_parameters(sc: &Scenario) -> Result<SimulationTruth> {
    sc.validate()?;
    let grid = omega_grid();
    let genes = (0..sc.n_genes)
        .into_par_iter()
        .map(|g| draw_gene(sc, g, &grid))
        .collect::<Result<Vec<_>>>()?;

    let mut cell_rng = rng_for(sc.seed, CELL_STREAM);
    let raw: Vec<f64> = (0..sc.n_cells).map(|_| cell_rng.random_range(0.5..1.0)).collect();
    let m = raw.iter().sum::<f64>() / sc.n_cells as f64;
    let lambda: Vec<f64> = raw.iter().map(|l| l / m).collect();

    let n_genes = sc.n_genes;
    // Scaling both transcription rates by m keeps every mean lambda * s~ unchanged.
    let rates: Vec<RateParams> = genes
        .iter()
        .map(|gd| RateParams::new(gd.rates.alpha_off * m, gd.rates.alpha_on * m, gd.rates.beta, gd.rates.gamma))
        .collect::<Result<_>>()?;
    let params: Vec<GeneParams> = genes
        .iter()
        .zip(&rates)
        .map(|(gd, r)| GeneParams {
            u_off: r.alpha_off / r.beta,
            u_on: r.alpha_on / r.beta,
            s_on: r.alpha_on / r.gamma,
            eta: gd.eta,
        })
        .collect();
    let a = 2.0 * params.iter().map(|gp| gp.u_on.max(gp.s_on)).fold(0.0, f64::max);
    let hyper = Hyper::new(a, sc.sector)?;

    let mut omega = vec![0.0; sc.n_groups * n_genes];
    let mut u_sw = vec![0.0; sc.n_groups * n_genes];
    for (g, gd) in genes.iter().enumerate() {
        for k in 0..sc.n_groups {
            omega[k * n_genes + g] = gd.omega[k];
            u_sw[k * n_genes + g] = switch_level(&rates[g], gd.omega[k]);
        }
    }
    let group_of_subgroup: Vec<usize> = (0..sc.n_subgroups).map(|r| sc.group_of_subgroup(r)).collect();
    let mut t_tilde = vec![0.0; sc.n_subgroups * n_genes];
    let mut phi = vec![0.0; sc.n_subgroups * n_genes];
    let mut positions = vec![Position::new(0.0, 0.0); sc.n_subgroups * n_genes];
    for (g, gd) in genes.iter().enumerate() {
        let coords = params[g].coords(a);
        for r in 0..sc.n_subgroups {
            let k = group_of_subgroup[r];
            let i = r * n_genes + g;
            t_tilde[i] = gd.t_tilde[r];
            phi[i] = time_to_phi(gd.t_tilde[r], u_sw[k * n_genes + g], &coords, BETA, sc.sector)?;
            positions[i] = solve_elapsed(gd.t_tilde[r], omega[k * n_genes + g], &rates[g]);
        }
    }
    let subgroup_of_cell: Vec<usize> = (0..sc.n_cells).map(|c| sc.subgroup_of_cell(c)).collect();
    let group_of_cell = subgroup_of_cell.iter().map(|&r| group_of_subgroup[r]).collect();
    Ok(SimulationTruth {
        scenario: *sc,
        state: ModelState {
            hyper,
            genes: params,
            u_sw,
            phi,
            lambda,
        },
        rates,
        omega,
        t_tilde,
        positions,
        group_of_cell,
        subgroup_of_cell,
        group_of_subgroup,
    })
}

/// One Negative-Binomial draw with mean `mu` and variance `mu + mu^2 eta`,
/// as a Gamma-Poisson mixture.
pub fn sample_nb<R: Rng + ?Sized>(mu: f64, eta: f64, rng: &mut R) -> u32 {
    if mu <= 0.0 {
        return 0;
    }
    let rate = if eta < POISSON_ETA {
        mu
    } else {
        let r = 1.0 / eta;
        Gamma::new(r, mu / r).expect("positive shape and scale").sample(rng)
    };
    if rate <= 0.0 {
        return 0;
    }
    let y: f64 = Poisson::new(rate).expect("positive rate").sample(rng);
    y.min(f64::from(u32::MAX)) as u32
}

/// Counts drawn from the model at the true parameters.
pub fn gen_counts_nb(truth: &SimulationTruth) -> Result<Dataset> {
    let sc = &truth.scenario;
    let (n_cells, n_genes) = (sc.n_cells, sc.n_genes);
    let columns: Vec<(Vec<u32>, Vec<u32>)> = (0..n_genes)
        .into_par_iter()
        .map(|g| {
            let mut rng = rng_for(sc.seed, COUNT_STREAM + g as u64);
            let eta = truth.state.genes[g].eta;
            let mut s = Vec::with_capacity(n_cells);
            let mut u = Vec::with_capacity(n_cells);
            for c in 0..n_cells {
                let pos = truth.cell_position(c, g);
                let lam = truth.state.lambda[c];
                s.push(sample_nb(lam * pos.s, eta, &mut rng));
                u.push(sample_nb(lam * pos.u, eta, &mut rng));
            }
            (s, u)
        })
        .collect();
    let mut spliced = CountMatrix::zeros(n_cells, n_genes);
    let mut unspliced = CountMatrix::zeros(n_cells, n_genes);
    for (g, (s, u)) in columns.iter().enumerate() {
        for c in 0..n_cells {
            spliced.set(c, g, s[c]);
            unspliced.set(c, g, u[c]);
        }
    }
    Dataset::new(spliced, unspliced, truth.group_of_cell.clone(), truth.subgroup_of_cell.clone())
}

/// Dense cells x genes pair of real-valued matrices, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousData {
    pub n_cells: usize,
    pub n_genes: usize,
    pub spliced: Vec<f64>,
    pub unspliced: Vec<f64>,
}

/// Variances `0.08 q_0.99` of the per-cell spliced and unspliced means.
pub fn in_variances(truth: &SimulationTruth) -> (f64, f64) {
    let sc = &truth.scenario;
    let mut s = Vec::with_capacity(sc.n_cells * sc.n_genes);
    let mut u = Vec::with_capacity(sc.n_cells * sc.n_genes);
    for c in 0..sc.n_cells {
        for g in 0..sc.n_genes {
            let p = truth.cell_position(c, g);
            s.push(p.s);
            u.push(p.u);
        }
    }
    (0.08 * quantile(&s, 0.99), 0.08 * quantile(&u, 0.99))
}

fn noise_rng(truth: &SimulationTruth, salt: u64) -> ChaCha8Rng {
    rng_for(truth.scenario.seed, NOISE_STREAM + salt)
}

/// Independent-Normal data: each cell's means plus Gaussian noise with the
/// shared variances of [`in_variances`].
pub fn gen_in_data(truth: &SimulationTruth) -> ContinuousData {
    let (vs, vu) = in_variances(truth);
    let (sd_s, sd_u) = (vs.sqrt(), vu.sqrt());
    let sc = &truth.scenario;
    let mut rng = noise_rng(truth, 0);
    let mut spliced = Vec::with_capacity(sc.n_cells * sc.n_genes);
    let mut unspliced = Vec::with_capacity(sc.n_cells * sc.n_genes);
    for c in 0..sc.n_cells {
        for g in 0..sc.n_genes {
            let p = truth.cell_position(c, g);
            let zs: f64 = rng.sample(StandardNormal);
            let zu: f64 = rng.sample(StandardNormal);
            spliced.push(p.s + sd_s * zs);
            unspliced.push(p.u + sd_u * zu);
        }
    }
    ContinuousData {
        n_cells: sc.n_cells,
        n_genes: sc.n_genes,
        spliced,
        unspliced,
    }
}

/// Deming-residual data: each cell is displaced from its mean by `rho` along
/// a direction `psi ~ U(pi/2, 3pi/2)`, with `rho ~ N(0, sigma2)`. The
/// conventional choice of `sigma2` is the mean of the two
/// [`in_variances`].
pub fn gen_deming_data(truth: &SimulationTruth, sigma2: f64) -> Result<ContinuousData> {
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidParameter(format!("variance {sigma2} must be finite and >= 0")));
    }
    let sd = sigma2.sqrt();
    let sc = &truth.scenario;
    let mut rng = noise_rng(truth, 1);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut spliced = Vec::with_capacity(sc.n_cells * sc.n_genes);
    let mut unspliced = Vec::with_capacity(sc.n_cells * sc.n_genes);
    for c in 0..sc.n_cells {
        for g in 0..sc.n_genes {
            let p = truth.cell_position(c, g);
            let psi = rng.random_range(half_pi..3.0 * half_pi);
            let z: f64 = rng.sample(StandardNormal);
            let rho = sd * z;
            spliced.push(rho * psi.cos() + p.s);
            unspliced.push(rho * psi.sin() + p.u);
        }
    }
    Ok(ContinuousData {
        n_cells: sc.n_cells,
        n_genes: sc.n_genes,
        spliced,
        unspliced,
    })
}

/// Default Deming variance: mean of the Independent-Normal variances.
pub fn default_deming_variance(truth: &SimulationTruth) -> f64 {
    let (vs, vu) = in_variances(truth);
    0.5 * (vs + vu)
}

/// Molecule counts `(S, U)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Molecules {
    pub s: u64,
    pub u: u64,
}

/// Exact stochastic simulation (direct method) of transcription at rate
/// `alpha(t)`, splicing at rate `beta U` and degradation at rate `gamma S`,
/// from time 0 to `t_end`. Transcription runs at `alpha_on` on
/// `[t0_on, t0_on + omega)` and at `alpha_off` otherwise; waiting times are
/// redrawn at each phase boundary. Without `init`, the start is drawn from the
/// stationary law of the OFF phase (independent Poissons).
pub fn gillespie(
    theta: &RateParams,
    t0_on: f64,
    omega: f64,
    t_end: f64,
    init: Option<Molecules>,
    seed: u64,
) -> Result<Molecules> {
    theta.validate()?;
    if !(t_end >= 0.0 && t_end.is_finite()) || t0_on.is_nan() || !(omega >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need finite t_end >= 0 and omega >= 0, got t_end {t_end}, omega {omega}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = match init {
        Some(m) => m,
        None => {
            let draw = |mean: f64, rng: &mut ChaCha8Rng| -> u64 {
                if mean > 0.0 {
                    Poisson::new(mean).expect("positive mean").sample(rng) as u64
                } else {
                    0
                }
            };
            let u = draw(theta.alpha_off / theta.beta, &mut rng);
            let s = draw(theta.alpha_off / theta.gamma, &mut rng);
            Molecules { s, u }
        }
    };
    let t_off = t0_on + omega;
    let mut t = 0.0;
    while t < t_end {
        let (alpha, boundary) = if t < t0_on {
            (theta.alpha_off, t0_on.min(t_end))
        } else if t < t_off {
            (theta.alpha_on, t_off.min(t_end))
        } else {
            (theta.alpha_off, t_end)
        };
        let r_split = theta.beta * state.u as f64;
        let r_deg = theta.gamma * state.s as f64;
        let total = alpha + r_split + r_deg;
        if total <= 0.0 {
            t = boundary;
            continue;
        }
        let wait = -(1.0 - rng.random::<f64>()).ln() / total;
        if t + wait >= boundary {
            // Memorylessness: restart the clock at the phase boundary.
            t = boundary;
            continue;
        }
        t += wait;
        let pick = rng.random::<f64>() * total;
        if pick < alpha {
            state.u += 1;
        } else if pick < alpha + r_split {
            state.u -= 1;
            state.s += 1;
        } else {
            state.s -= 1;
        }
    }
    Ok(state)
}

/// JSON has no infinities: non-finite entries are written as the strings
/// `"inf"`, `"-inf"` and `"nan"`.
mod extended_reals {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Value {
        Finite(f64),
        Special(String),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|&x| match x {
                x if x.is_finite() => Value::Finite(x),
                x if x.is_nan() => Value::Special("nan".into()),
                x if x > 0.0 => Value::Special("inf".into()),
                _ => Value::Special("-inf".into()),
            })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Value>::deserialize(d)?
            .into_iter()
            .map(|v| match v {
                Value::Finite(x) => Ok(x),
                Value::Special(t) => match t.as_str() {
                    "inf" => Ok(f64::INFINITY),
                    "-inf" => Ok(f64::NEG_INFINITY),
                    "nan" => Ok(f64::NAN),
                    _ => Err(serde::de::Error::custom(format!("unexpected value `{t}`"))),
                },
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::phi_to_position;

    #[test]
    fn grid_starts_at_thirty_percent() {
        let grid = omega_grid();
        assert_eq!(grid.len(), 14);
        let frac = 1.0 - (-grid[0]).exp();
        assert!((frac - 0.3).abs() < 1e-15);
    }

    #[test]
    fn capture_normalised() {
        let sc = Scenario::new(3, 40, 1, 4, 2, 5).unwrap();
        let t = gen_parameters(&sc).unwrap();
        let m = t.state.lambda.iter().sum::<f64>() / 40.0;
        assert!((m - 1.0).abs() < 1e-12);
        assert!(t.state.lambda.iter().all(|&l| l > 0.0));
    }

    #[test]
    fn positions_lie_on_almond() {
        let sc = Scenario::new(20, 60, 2, 6, 2, 9).unwrap();
        let t = gen_parameters(&sc).unwrap();
        let n_genes = sc.n_genes;
        for r in 0..sc.n_subgroups {
            for g in 0..n_genes {
                let k = t.group_of_subgroup[r];
                let ap = AngularPosition::new(t.state.phi(r, g), sc.sector).unwrap();
                let coords = t.state.genes[g].coords(t.state.hyper.a);
                let pos = phi_to_position(&ap, t.state.u_sw(k, g), &coords, BETA).unwrap();
                let truth = t.positions[r * n_genes + g];
                assert!(pos.dist(&truth) < 1e-9 * (1.0 + truth.s.abs()), "{pos:?} vs {truth:?}");
            }
        }
    }

    #[test]
    fn scenario_shapes() {
        let sc = Scenario::new(1, 3000, 1, 10, 10, 0).unwrap();
        let counts = (0..3000).filter(|&c| sc.subgroup_of_cell(c) == 3).count();
        assert_eq!(counts, 300);
        assert!(Scenario::new(1, 30, 1, 5, 10, 0).is_err());
        assert!(Scenario::new(1, 30, 10, 15, 10, 0).is_err());
    }

    #[test]
    fn reproducible() {
        let sc = Scenario::new(4, 30, 1, 5, 5, 3).unwrap();
        let a = gen_parameters(&sc).unwrap();
        assert_eq!(a, gen_parameters(&sc).unwrap());
        assert_eq!(gen_counts_nb(&a).unwrap(), gen_counts_nb(&a).unwrap());
    }

    #[test]
    fn degenerate_deming() {
        let sc = Scenario::new(2, 10, 1, 2, 1, 3).unwrap();
        let t = gen_parameters(&sc).unwrap();
        let d = gen_deming_data(&t, 0.0).unwrap();
        assert_eq!(d.spliced[3], t.cell_position(1, 1).s);
    }

    #[test]
    fn gillespie_rejects_bad_input() {
        let theta = RateParams::new(1.0, 2.0, 1.0, 1.0).unwrap();
        assert!(gillespie(&theta, 0.0, 1.0, -1.0, None, 0).is_err());
    }
}
