use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adapt::{adapt_gain, AdaptiveMvn, AdaptiveScale};
use super::draws::{AcceptanceReport, PointwiseAccumulator, PosteriorDraws};
use super::ChainConfig;
use crate::error::{Error, Result};
use crate::geometry::{Almond, TWO_PI};
use crate::kinetics::Position;
use crate::model::{
    coords_logprior, eta_logprior, lambda_logprior, ln_fact, log_prior, log_rising, phi_logprior,
    rescale_capture, switch_logprior, Dataset, GeneParams, Hyper, ModelState, POISSON_ETA,
};
use crate::stats::quantile;

/// Starting point of a chain.
#[derive(Debug, Clone)]
pub enum Init {
    /// Moment-matched start derived from the counts.
    Auto(Hyper),
    State(ModelState),
}

/// Moment-matched starting state.
pub fn initial_state(data: &Dataset, hyper: Hyper) -> ModelState {
    let n_cells = data.n_cells();
    let n_genes = data.n_genes();
    let totals: Vec<f64> = (0..n_cells)
        .map(|c| {
            let s: u64 = data.spliced.row(c).iter().map(|&v| u64::from(v)).sum();
            let u: u64 = data.unspliced.row(c).iter().map(|&v| u64::from(v)).sum();
            (s + u) as f64
        })
        .collect();
    let max_total = totals.iter().copied().fold(0.0, f64::max);
    let lambda: Vec<f64> = totals
        .iter()
        .map(|&t| {
            if max_total > 0.0 {
                (t / max_total).clamp(1e-3, 0.999)
            } else {
                0.5
            }
        })
        .collect();

    let a = hyper.a;
    let eps = 1e-4 * a;
    let genes = (0..n_genes)
        .map(|g| {
            let yu: Vec<f64> = (0..n_cells).map(|c| f64::from(data.unspliced.get(c, g)) / lambda[c]).collect();
            let ys: Vec<f64> = (0..n_cells).map(|c| f64::from(data.spliced.get(c, g)) / lambda[c]).collect();
            let u_off = quantile(&yu, 0.05).clamp(eps, a - 2.0 * eps);
            let u_on = quantile(&yu, 0.99).clamp(u_off + eps, a - eps);
            let s_on = quantile(&ys, 0.99).clamp(eps, a - eps);
            GeneParams {
                u_off,
                u_on,
                s_on,
                eta: 0.5,
            }
        })
        .collect::<Vec<_>>();
    let mut u_sw = Vec::with_capacity(data.n_groups() * n_genes);
    for _ in 0..data.n_groups() {
        u_sw.extend(genes.iter().map(|gp| 0.5 * (gp.u_off + gp.u_on)));
    }
    ModelState {
        hyper,
        genes,
        u_sw,
        phi: vec![std::f64::consts::FRAC_PI_2; data.n_subgroups() * n_genes],
        lambda,
    }
}

/// Index structures derived from the dataset.
struct Layout {
    n_cells: usize,
    n_genes: usize,
    subgroup_of_cell: Vec<usize>,
    group_of_subgroup: Vec<usize>,
    cells_by_subgroup: Vec<Vec<usize>>,
    subgroups_by_group: Vec<Vec<usize>>,
    /// Gene-major copies of the counts.
    ys: Vec<Vec<u32>>,
    yu: Vec<Vec<u32>>,
    ln_fact: Vec<f64>,
}

impl Layout {
    fn new(data: &Dataset) -> Self {
        let n_genes = data.n_genes();
        let max = data.max_count() as usize;
        Self {
            n_cells: data.n_cells(),
            n_genes,
            subgroup_of_cell: data.subgroup_of_cell.clone(),
            group_of_subgroup: data.group_of_subgroup.clone(),
            cells_by_subgroup: data.cells_by_subgroup(),
            subgroups_by_group: data.subgroups_by_group(),
            ys: (0..n_genes).map(|g| data.spliced.column(g)).collect(),
            yu: (0..n_genes).map(|g| data.unspliced.column(g)).collect(),
            ln_fact: (0..=max as u32).map(ln_fact).collect(),
        }
    }
}

/// Dispersion regime of one gene.
#[derive(Debug, Clone, Copy, Default)]
enum Disp {
    #[default]
    Poisson,
    Nb { r: f64, eta: f64, ln_r: f64 },
}

impl Disp {
    fn new(eta: f64) -> Self {
        if eta < POISSON_ETA {
            Disp::Poisson
        } else {
            let r = 1.0 / eta;
            Disp::Nb { r, eta, ln_r: r.ln() }
        }
    }

    /// Mean-dependent part of the log-pmf; the rest lives in the per-cell constant.
    #[inline]
    fn part(self, y: u32, ln_mu: f64, mu: f64) -> f64 {
        let yf = f64::from(y);
        match self {
            Disp::Poisson => {
                if y == 0 {
                    -mu
                } else {
                    yf * ln_mu - mu
                }
            }
            Disp::Nb { r, eta, ln_r } => {
                let x = mu * eta;
                // ln is much cheaper than ln_1p and loses nothing once x is not small.
                let l = if x > 1e-2 { (1.0 + x).ln() } else { x.ln_1p() };
                if y == 0 {
                    -r * l
                } else {
                    yf * (ln_mu - ln_r) - (r + yf) * l
                }
            }
        }
    }
}

/// Observation pair of one cell for one gene.
#[derive(Clone, Copy)]
struct Obs {
    ys: u32,
    yu: u32,
}

#[inline]
fn term(k: f64, obs: Obs, ln_lam: f64, lam: f64, pos: Position, ln_pos: (f64, f64), d: Disp) -> f64 {
    k + d.part(obs.ys, ln_lam + ln_pos.0, lam * pos.s) + d.part(obs.yu, ln_lam + ln_pos.1, lam * pos.u)
}

#[inline]
fn ln_pair(pos: Position) -> (f64, f64) {
    (pos.s.ln(), pos.u.ln())
}

/// Derived geometry of one gene, rebuilt from the parameters.
#[derive(Debug, Clone, Default)]
struct Geom {
    almond: Option<Almond>,
    switches: Vec<Position>,
    pos: Vec<Position>,
    ln_pos: Vec<(f64, f64)>,
}

impl Geom {
    fn build(params: &GeneParams, u_sw: &[f64], phi: &[f64], hyper: Hyper, group_of_subgroup: &[usize]) -> Self {
        let almond = Almond::new(&params.coords(hyper.a));
        let switches: Vec<Position> = u_sw.iter().map(|&u| almond.switch_point(u)).collect();
        let pos: Vec<Position> = phi
            .iter()
            .zip(group_of_subgroup)
            .map(|(&f, &k)| almond.position(f, hyper.p, switches[k]))
            .collect();
        let ln_pos = pos.iter().map(|&p| ln_pair(p)).collect();
        Self {
            almond: Some(almond),
            switches,
            pos,
            ln_pos,
        }
    }

    #[inline]
    fn almond(&self) -> &Almond {
        self.almond.as_ref().expect("geometry built")
    }
}

fn logit(z: f64) -> f64 {
    (z / (1.0 - z)).ln()
}

#[inline]
fn sigmoid(y: f64) -> f64 {
    1.0 / (1.0 + (-y).exp())
}

/// `ln(z (1 - z))` for `z = sigmoid(y)`.
#[inline]
fn ln_dsigmoid(y: f64) -> f64 {
    let softplus = |x: f64| if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    -softplus(y) - softplus(-y)
}

/// Ordered-simplex logit transform of `(u_off, u_on, s_on)` and the log-Jacobian
/// of the inverse map (up to the constant `2 ln a`).
fn to_unconstrained(gp: &GeneParams, a: f64) -> [f64; 3] {
    [
        logit(gp.u_off / a),
        logit((gp.u_on - gp.u_off) / (a - gp.u_off)),
        logit(gp.s_on / a),
    ]
}

fn from_unconstrained(y: &[f64; 3], a: f64, eta: f64) -> (GeneParams, f64) {
    let u_off = a * sigmoid(y[0]);
    let u_on = u_off + (a - u_off) * sigmoid(y[1]);
    let s_on = a * sigmoid(y[2]);
    let log_jac = ln_dsigmoid(y[0]) + ln_dsigmoid(y[1]) + ln_dsigmoid(y[2]) + (a - u_off).ln();
    (GeneParams { u_off, u_on, s_on, eta }, log_jac)
}

#[inline]
fn accept_prob(delta: f64) -> f64 {
    if delta >= 0.0 {
        1.0
    } else if delta.is_nan() {
        0.0
    } else {
        delta.exp()
    }
}

#[inline]
fn mh_accept(rng: &mut ChaCha8Rng, delta: f64) -> bool {
    // Always consume one uniform so the stream does not depend on the branch.
    let u: f64 = rng.random();
    !delta.is_nan() && u.ln() < delta
}

/// Parameters, adaptation state and cached per-cell terms of one gene.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GeneBlock {
    params: GeneParams,
    u_sw: Vec<f64>,
    phi: Vec<f64>,
    joint: AdaptiveMvn<3>,
    eta_scale: AdaptiveScale,
    sw_scale: Vec<AdaptiveScale>,
    phi_scale: Vec<AdaptiveScale>,
    rng: ChaCha8Rng,
    /// Current log-likelihood term of every cell.
    ll: Vec<f64>,
    /// Dispersion-dependent constants of every cell.
    kconst: Vec<f64>,
    stats: AcceptanceReport,
    #[serde(skip)]
    geom: Geom,
    #[serde(skip)]
    disp: Disp,
    #[serde(skip)]
    scratch: Vec<f64>,
    #[serde(skip)]
    scratch_k: Vec<f64>,
    #[serde(skip)]
    scratch_pos: Vec<Position>,
}

/// Read-only context of the gene phase.
struct GeneCtx<'a> {
    layout: &'a Layout,
    hyper: Hyper,
    lambda: &'a [f64],
    ln_lambda: &'a [f64],
}

impl GeneBlock {
    fn new(g: usize, state: &ModelState, cfg: &ChainConfig) -> Self {
        let params = state.genes[g];
        let u_sw: Vec<f64> = (0..state.n_groups()).map(|k| state.u_sw(k, g)).collect();
        let phi: Vec<f64> = (0..state.n_subgroups()).map(|r| state.phi(r, g)).collect();
        let span = params.u_on - params.u_off;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(g as u64);
        Self {
            params,
            joint: AdaptiveMvn::new(to_unconstrained(&params, state.hyper.a), 0.1, 1e-10),
            eta_scale: AdaptiveScale::new(0.1),
            sw_scale: vec![AdaptiveScale::new(0.1 * span); u_sw.len()],
            phi_scale: vec![AdaptiveScale::new(0.3); phi.len()],
            u_sw,
            phi,
            rng,
            ll: Vec::new(),
            kconst: Vec::new(),
            stats: AcceptanceReport::default(),
            geom: Geom::default(),
            disp: Disp::Poisson,
            scratch: Vec::new(),
            scratch_k: Vec::new(),
            scratch_pos: Vec::new(),
        }
    }

    #[inline]
    fn disp(&self) -> Disp {
        self.disp
    }

    #[inline]
    fn obs(&self, layout: &Layout, g: usize, c: usize) -> Obs {
        Obs {
            ys: layout.ys[g][c],
            yu: layout.yu[g][c],
        }
    }

    /// Per-cell constants `ln Gamma(r+y)/Gamma(r) - ln y!` summed over both counts.
    fn constants(layout: &Layout, g: usize, eta: f64, out: &mut Vec<f64>) {
        let (ys, yu) = (&layout.ys[g], &layout.yu[g]);
        let max = ys.iter().chain(yu).copied().max().unwrap_or(0);
        let rising: Vec<f64> = match Disp::new(eta) {
            Disp::Poisson => vec![0.0; max as usize + 1],
            Disp::Nb { r, .. } => {
                let mut t = Vec::with_capacity(max as usize + 1);
                let mut acc = 0.0;
                t.push(0.0);
                for y in 1..=max {
                    if y <= 256 {
                        acc += (r + f64::from(y - 1)).ln();
                        t.push(acc);
                    } else {
                        t.push(log_rising(r, y));
                    }
                }
                t
            }
        };
        out.clear();
        out.extend(ys.iter().zip(yu).map(|(&s, &u)| {
            rising[s as usize] + rising[u as usize] - layout.ln_fact[s as usize] - layout.ln_fact[u as usize]
        }));
    }

    /// Rebuilds geometry, constants and cached terms from the parameters.
    fn rebuild(&mut self, g: usize, ctx: &GeneCtx<'_>, recompute_terms: bool) {
        let layout = ctx.layout;
        self.geom = Geom::build(&self.params, &self.u_sw, &self.phi, ctx.hyper, &layout.group_of_subgroup);
        self.disp = Disp::new(self.params.eta);
        self.scratch = vec![0.0; layout.n_cells];
        self.scratch_k = Vec::with_capacity(layout.n_cells);
        self.scratch_pos = vec![Position::new(0.0, 0.0); self.phi.len()];
        if recompute_terms {
            let mut k = Vec::new();
            Self::constants(layout, g, self.params.eta, &mut k);
            self.kconst = k;
            let d = self.disp();
            self.ll = (0..layout.n_cells)
                .map(|c| {
                    let r = layout.subgroup_of_cell[c];
                    term(
                        self.kconst[c],
                        self.obs(layout, g, c),
                        ctx.ln_lambda[c],
                        ctx.lambda[c],
                        self.geom.pos[r],
                        self.geom.ln_pos[r],
                        d,
                    )
                })
                .collect();
        }
    }

    fn refresh_cells(&mut self, g: usize, ctx: &GeneCtx<'_>, changed: &[usize]) {
        let d = self.disp();
        for &c in changed {
            let r = ctx.layout.subgroup_of_cell[c];
            self.ll[c] = term(
                self.kconst[c],
                self.obs(ctx.layout, g, c),
                ctx.ln_lambda[c],
                ctx.lambda[c],
                self.geom.pos[r],
                self.geom.ln_pos[r],
                d,
            );
        }
    }

    fn sweep(&mut self, g: usize, ctx: &GeneCtx<'_>, cfg: &ChainConfig, k: usize) {
        let adapting = cfg.is_adapting(k);
        let gain = adapt_gain(k, cfg.gamma_c1, cfg.gamma_c2);
        let frozen = k > cfg.adapt_end;
        if !cfg.fixed.coords {
            let acc = self.update_coords(g, ctx, adapting, gain, cfg.target_accept);
            if frozen {
                self.stats.coords.record(acc);
            }
        }
        if !cfg.fixed.eta {
            let acc = self.update_eta(g, ctx);
            self.eta_scale.record(acc);
            if frozen {
                self.stats.eta.record(acc);
            }
        }
        if !cfg.fixed.switch {
            for kk in 0..self.u_sw.len() {
                let acc = self.update_switch(g, kk, ctx);
                self.sw_scale[kk].record(acc);
                if frozen {
                    self.stats.switch.record(acc);
                }
            }
        }
        if !cfg.fixed.phi {
            for r in 0..self.phi.len() {
                let acc = self.update_phi(g, r, ctx);
                self.phi_scale[r].record(acc);
                if frozen {
                    self.stats.phi.record(acc);
                }
            }
        }
        if k.is_multiple_of(cfg.univariate_adapt_interval) {
            let target = cfg.target_accept;
            self.eta_scale.end_window(adapting, gain, target);
            for s in self.sw_scale.iter_mut().chain(self.phi_scale.iter_mut()) {
                s.end_window(adapting, gain, target);
            }
        }
    }

    fn update_coords(&mut self, g: usize, ctx: &GeneCtx<'_>, adapting: bool, gain: f64, target: f64) -> bool {
        let a = ctx.hyper.a;
        let y = to_unconstrained(&self.params, a);
        let prop = self.joint.propose(&y, &mut self.rng);
        let (_, cur_jac) = from_unconstrained(&y, a, self.params.eta);
        let cur = self.params;
        let (new, new_jac) = from_unconstrained(&prop, a, self.params.eta);
        let k_groups = self.u_sw.len();

        let inside = new.u_off > 0.0
            && new.u_off < new.u_on
            && new.u_on <= a
            && new.s_on > 0.0
            && new.s_on <= a
            && self.u_sw.iter().all(|&u| new.u_off < u && u < new.u_on);
        let mut delta = f64::NEG_INFINITY;
        let mut geom = None;
        if inside {
            let layout = ctx.layout;
            let ng = Geom::build(&new, &self.u_sw, &self.phi, ctx.hyper, &layout.group_of_subgroup);
            let d = self.disp();
            let mut sum_new = 0.0;
            let mut sum_old = 0.0;
            for c in 0..layout.n_cells {
                let r = layout.subgroup_of_cell[c];
                let t = term(
                    self.kconst[c],
                    self.obs(layout, g, c),
                    ctx.ln_lambda[c],
                    ctx.lambda[c],
                    ng.pos[r],
                    ng.ln_pos[r],
                    d,
                );
                self.scratch[c] = t;
                sum_new += t;
                sum_old += self.ll[c];
            }
            // Each switching level contributes -ln(u_on - u_off) inside its support.
            let prior_new = coords_logprior(&new, a) - k_groups as f64 * (new.u_on - new.u_off).ln();
            let prior_old = coords_logprior(&cur, a) - k_groups as f64 * (cur.u_on - cur.u_off).ln();
            delta = (sum_new - sum_old) + (prior_new - prior_old) + (new_jac - cur_jac);
            geom = Some(ng);
        }
        let alpha = accept_prob(delta);
        let accepted = mh_accept(&mut self.rng, delta);
        if accepted {
            self.params = new;
            self.geom = geom.expect("proposal inside support");
            std::mem::swap(&mut self.ll, &mut self.scratch);
        }
        if adapting {
            let x = if accepted { prop } else { y };
            self.joint.adapt(&x, alpha, gain, target);
        }
        accepted
    }

    fn update_eta(&mut self, g: usize, ctx: &GeneCtx<'_>) -> bool {
        let z: f64 = self.rng.sample(StandardNormal);
        let eta = self.params.eta + self.eta_scale.sd() * z;
        let mut delta = f64::NEG_INFINITY;
        if eta >= 0.0 {
            let layout = ctx.layout;
            let mut k = std::mem::take(&mut self.scratch_k);
            Self::constants(layout, g, eta, &mut k);
            let d = Disp::new(eta);
            let mut sum_new = 0.0;
            let mut sum_old = 0.0;
            for c in 0..layout.n_cells {
                let r = layout.subgroup_of_cell[c];
                let t = term(
                    k[c],
                    self.obs(layout, g, c),
                    ctx.ln_lambda[c],
                    ctx.lambda[c],
                    self.geom.pos[r],
                    self.geom.ln_pos[r],
                    d,
                );
                self.scratch[c] = t;
                sum_new += t;
                sum_old += self.ll[c];
            }
            self.scratch_k = k;
            delta = (sum_new - sum_old) + eta_logprior(eta) - eta_logprior(self.params.eta);
        }
        let accepted = mh_accept(&mut self.rng, delta);
        if accepted {
            self.params.eta = eta;
            self.disp = Disp::new(eta);
            std::mem::swap(&mut self.kconst, &mut self.scratch_k);
            std::mem::swap(&mut self.ll, &mut self.scratch);
        }
        accepted
    }

    fn update_switch(&mut self, g: usize, kk: usize, ctx: &GeneCtx<'_>) -> bool {
        let z: f64 = self.rng.sample(StandardNormal);
        let u = self.u_sw[kk] + self.sw_scale[kk].sd() * z;
        let (u_off, u_on) = (self.params.u_off, self.params.u_on);
        let layout = ctx.layout;
        let mut delta = f64::NEG_INFINITY;
        let mut sw = Position::new(0.0, 0.0);
        if u_off < u && u < u_on {
            let almond = *self.geom.almond();
            sw = almond.switch_point(u);
            let d = self.disp();
            let mut diff = 0.0;
            for &r in &layout.subgroups_by_group[kk] {
                let pos = almond.position(self.phi[r], ctx.hyper.p, sw);
                self.scratch_pos[r] = pos;
                let lp = ln_pair(pos);
                for &c in &layout.cells_by_subgroup[r] {
                    let t = term(self.kconst[c], self.obs(layout, g, c), ctx.ln_lambda[c], ctx.lambda[c], pos, lp, d);
                    self.scratch[c] = t;
                    diff += t - self.ll[c];
                }
            }
            delta = diff + switch_logprior(u, u_off, u_on) - switch_logprior(self.u_sw[kk], u_off, u_on);
        }
        let accepted = mh_accept(&mut self.rng, delta);
        if accepted {
            self.u_sw[kk] = u;
            self.geom.switches[kk] = sw;
            for &r in &layout.subgroups_by_group[kk] {
                let pos = self.scratch_pos[r];
                self.geom.pos[r] = pos;
                self.geom.ln_pos[r] = ln_pair(pos);
                for &c in &layout.cells_by_subgroup[r] {
                    self.ll[c] = self.scratch[c];
                }
            }
        }
        accepted
    }

    fn update_phi(&mut self, g: usize, r: usize, ctx: &GeneCtx<'_>) -> bool {
        let z: f64 = self.rng.sample(StandardNormal);
        // The angle lives on a circle: the position map is continuous across 2pi.
        let mut phi = (self.phi[r] + self.phi_scale[r].sd() * z).rem_euclid(TWO_PI);
        if phi >= TWO_PI {
            phi = 0.0;
        }
        let layout = ctx.layout;
        let k = layout.group_of_subgroup[r];
        let pos = self.geom.almond().position(phi, ctx.hyper.p, self.geom.switches[k]);
        let lp = ln_pair(pos);
        let d = self.disp();
        let mut diff = 0.0;
        for &c in &layout.cells_by_subgroup[r] {
            let t = term(self.kconst[c], self.obs(layout, g, c), ctx.ln_lambda[c], ctx.lambda[c], pos, lp, d);
            self.scratch[c] = t;
            diff += t - self.ll[c];
        }
        let delta = diff + phi_logprior(phi) - phi_logprior(self.phi[r]);
        let accepted = mh_accept(&mut self.rng, delta);
        if accepted {
            self.phi[r] = phi;
            self.geom.pos[r] = pos;
            self.geom.ln_pos[r] = lp;
            for &c in &layout.cells_by_subgroup[r] {
                self.ll[c] = self.scratch[c];
            }
        }
        accepted
    }
}

/// Capture efficiency of one cell with its proposal state.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CellBlock {
    lambda: f64,
    scale: AdaptiveScale,
    rng: ChaCha8Rng,
    changed: bool,
}

/// Cell random streams are offset so they never collide with gene streams.
const CELL_STREAM_OFFSET: u64 = 1 << 40;

impl CellBlock {
    fn new(c: usize, lambda: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(CELL_STREAM_OFFSET + c as u64);
        Self {
            lambda,
            scale: AdaptiveScale::new(0.05),
            rng,
            changed: false,
        }
    }

    fn update(&mut self, c: usize, genes: &[GeneBlock], layout: &Layout) -> bool {
        let z: f64 = self.rng.sample(StandardNormal);
        let lam = self.lambda + self.scale.sd() * z;
        let mut delta = f64::NEG_INFINITY;
        if lam > 0.0 && lam <= 1.0 {
            let ln_lam = lam.ln();
            let r = layout.subgroup_of_cell[c];
            let mut diff = 0.0;
            for (g, gb) in genes.iter().enumerate() {
                let t = term(
                    gb.kconst[c],
                    gb.obs(layout, g, c),
                    ln_lam,
                    lam,
                    gb.geom.pos[r],
                    gb.geom.ln_pos[r],
                    gb.disp(),
                );
                diff += t - gb.ll[c];
            }
            delta = diff + lambda_logprior(lam) - lambda_logprior(self.lambda);
        }
        let accepted = mh_accept(&mut self.rng, delta);
        self.changed = accepted;
        if accepted {
            self.lambda = lam;
        }
        accepted
    }
}

/// Serializable part of a chain; everything else is rebuilt from the data.
#[derive(Serialize, Deserialize)]
struct Snapshot {
    config: ChainConfig,
    hyper: Hyper,
    iteration: usize,
    genes: Vec<GeneBlock>,
    cells: Vec<CellBlock>,
    cell_stats: AcceptanceReport,
    draws: Vec<ModelState>,
    log_posterior: Vec<f64>,
    log_likelihood: Vec<f64>,
    pointwise: PointwiseAccumulator,
    loglik: Option<Vec<Vec<f64>>>,
}

/// Proposal covariances of the joint coordinate blocks (one per gene) and
/// log proposal sds of every univariate block.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalState {
    pub coords_cov: Vec<[[f64; 3]; 3]>,
    pub log_sd: Vec<f64>,
}

/// A running Markov chain over the full model state.
pub struct Chain<'d> {
    data: &'d Dataset,
    layout: Layout,
    snap: Snapshot,
    lambda: Vec<f64>,
    ln_lambda: Vec<f64>,
}

impl<'d> Chain<'d> {
    pub fn new(data: &'d Dataset, cfg: ChainConfig, init: Init) -> Result<Self> {
        cfg.validate()?;
        let state = match init {
            Init::Auto(hyper) => initial_state(data, hyper),
            Init::State(s) => s,
        };
        check_initial(&state, data)?;
        let genes = (0..data.n_genes()).map(|g| GeneBlock::new(g, &state, &cfg)).collect();
        let cells = state
            .lambda
            .iter()
            .enumerate()
            .map(|(c, &l)| CellBlock::new(c, l, cfg.seed))
            .collect();
        let loglik = cfg.store_loglik.then(Vec::new);
        let snap = Snapshot {
            hyper: state.hyper,
            iteration: 0,
            genes,
            cells,
            cell_stats: AcceptanceReport::default(),
            draws: Vec::new(),
            log_posterior: Vec::new(),
            log_likelihood: Vec::new(),
            pointwise: PointwiseAccumulator::new(data.n_cells() * data.n_genes()),
            loglik,
            config: cfg,
        };
        let chain = Self::assemble(data, snap, true);
        let total: f64 = chain.total_loglik();
        if !total.is_finite() {
            let g = chain.snap.genes.iter().position(|gb| !gb.ll.iter().sum::<f64>().is_finite());
            return Err(Error::InvalidInitialization {
                block: format!("likelihood (gene {})", g.unwrap_or(0)),
            });
        }
        Ok(chain)
    }

    fn assemble(data: &'d Dataset, snap: Snapshot, recompute_terms: bool) -> Self {
        let layout = Layout::new(data);
        let lambda: Vec<f64> = snap.cells.iter().map(|c| c.lambda).collect();
        let ln_lambda = lambda.iter().map(|l| l.ln()).collect();
        let mut chain = Self {
            data,
            layout,
            snap,
            lambda,
            ln_lambda,
        };
        let ctx = GeneCtx {
            layout: &chain.layout,
            hyper: chain.snap.hyper,
            lambda: &chain.lambda,
            ln_lambda: &chain.ln_lambda,
        };
        chain
            .snap
            .genes
            .iter_mut()
            .enumerate()
            .for_each(|(g, gb)| gb.rebuild(g, &ctx, recompute_terms));
        chain
    }

    pub fn config(&self) -> &ChainConfig {
        &self.snap.config
    }

    /// Completed iterations.
    pub fn iteration(&self) -> usize {
        self.snap.iteration
    }

    pub fn is_done(&self) -> bool {
        self.snap.iteration >= self.snap.config.n_iter
    }

    /// Current (unrescaled) state.
    pub fn state(&self) -> ModelState {
        let genes: Vec<GeneParams> = self.snap.genes.iter().map(|gb| gb.params).collect();
        let n_genes = genes.len();
        let n_groups = self.data.n_groups();
        let n_sub = self.data.n_subgroups();
        let mut u_sw = vec![0.0; n_groups * n_genes];
        let mut phi = vec![0.0; n_sub * n_genes];
        for (g, gb) in self.snap.genes.iter().enumerate() {
            for k in 0..n_groups {
                u_sw[k * n_genes + g] = gb.u_sw[k];
            }
            for r in 0..n_sub {
                phi[r * n_genes + g] = gb.phi[r];
            }
        }
        ModelState {
            hyper: self.snap.hyper,
            genes,
            u_sw,
            phi,
            lambda: self.lambda.clone(),
        }
    }

    /// Current proposal scales of every block.
    pub fn proposals(&self) -> ProposalState {
        let mut log_sd = Vec::new();
        for gb in &self.snap.genes {
            log_sd.push(gb.eta_scale.log_sd);
            log_sd.extend(gb.sw_scale.iter().map(|s| s.log_sd));
            log_sd.extend(gb.phi_scale.iter().map(|s| s.log_sd));
        }
        log_sd.extend(self.snap.cells.iter().map(|c| c.scale.log_sd));
        ProposalState {
            coords_cov: self.snap.genes.iter().map(|gb| gb.joint.proposal_cov()).collect(),
            log_sd,
        }
    }

    /// Log-likelihood from the cached terms.
    pub fn total_loglik(&self) -> f64 {
        self.snap.genes.iter().map(|gb| gb.ll.iter().sum::<f64>()).sum()
    }

    /// Cached pointwise log-likelihood, `c * G + g`.
    pub fn pointwise_loglik(&self) -> Vec<f64> {
        let n_genes = self.layout.n_genes;
        let mut out = vec![0.0; self.layout.n_cells * n_genes];
        for (g, gb) in self.snap.genes.iter().enumerate() {
            for (c, &v) in gb.ll.iter().enumerate() {
                out[c * n_genes + g] = v;
            }
        }
        out
    }

    /// Runs one full sweep.
    pub fn step(&mut self) {
        let k = self.snap.iteration + 1;
        let cfg = self.snap.config.clone();
        {
            let ctx = GeneCtx {
                layout: &self.layout,
                hyper: self.snap.hyper,
                lambda: &self.lambda,
                ln_lambda: &self.ln_lambda,
            };
            self.snap
                .genes
                .par_iter_mut()
                .enumerate()
                .for_each(|(g, gb)| gb.sweep(g, &ctx, &cfg, k));
        }

        if !cfg.fixed.lambda {
            let genes = &self.snap.genes;
            let layout = &self.layout;
            let accepted: Vec<bool> = self
                .snap
                .cells
                .par_iter_mut()
                .enumerate()
                .map(|(c, cb)| {
                    let acc = cb.update(c, genes, layout);
                    cb.scale.record(acc);
                    acc
                })
                .collect();
            let frozen = k > cfg.adapt_end;
            let mut changed = Vec::new();
            for (c, cb) in self.snap.cells.iter().enumerate() {
                if frozen {
                    self.snap.cell_stats.lambda.record(accepted[c]);
                }
                if cb.changed {
                    changed.push(c);
                    self.lambda[c] = cb.lambda;
                    self.ln_lambda[c] = cb.lambda.ln();
                }
            }
            if k.is_multiple_of(cfg.univariate_adapt_interval) {
                let adapting = cfg.is_adapting(k);
                let gain = adapt_gain(k, cfg.gamma_c1, cfg.gamma_c2);
                for cb in &mut self.snap.cells {
                    cb.scale.end_window(adapting, gain, cfg.target_accept);
                }
            }
            if !changed.is_empty() {
                let ctx = GeneCtx {
                    layout: &self.layout,
                    hyper: self.snap.hyper,
                    lambda: &self.lambda,
                    ln_lambda: &self.ln_lambda,
                };
                self.snap
                    .genes
                    .par_iter_mut()
                    .enumerate()
                    .for_each(|(g, gb)| gb.refresh_cells(g, &ctx, &changed));
            }
        }

        self.snap.iteration = k;
        if cfg.is_retained(k) {
            self.record_draw();
        }
    }

    fn record_draw(&mut self) {
        let state = self.state();
        let ll = self.total_loglik();
        self.snap.log_likelihood.push(ll);
        self.snap.log_posterior.push(log_prior(&state) + ll);
        let pointwise = self.pointwise_loglik();
        self.snap.pointwise.push(&pointwise);
        if let Some(store) = &mut self.snap.loglik {
            store.push(pointwise);
        }
        self.snap.draws.push(rescale_capture(&state));
    }

    /// Runs up to `n` more sweeps (stopping at `n_iter`); returns how many ran.
    pub fn advance(&mut self, n: usize) -> usize {
        let todo = n.min(self.snap.config.n_iter - self.snap.iteration);
        let pool = thread_pool(self.snap.config.threads);
        match pool {
            Some(pool) => pool.install(|| (0..todo).for_each(|_| self.step())),
            None => (0..todo).for_each(|_| self.step()),
        }
        todo
    }

    /// Serializes the full chain state, including random streams and adaptation.
    pub fn checkpoint(&self) -> Result<Vec<u8>> {
        bincode::serialize(&self.snap).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    /// Restores a chain from [`Chain::checkpoint`] output on the same data.
    pub fn resume(data: &'d Dataset, bytes: &[u8]) -> Result<Self> {
        let snap: Snapshot = bincode::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let ok = snap.cells.len() == data.n_cells()
            && snap.genes.len() == data.n_genes()
            && snap.genes.iter().all(|gb| {
                gb.u_sw.len() == data.n_groups() && gb.phi.len() == data.n_subgroups() && gb.ll.len() == data.n_cells()
            });
        if !ok {
            return Err(Error::Checkpoint("checkpoint does not match the dataset".into()));
        }
        Ok(Self::assemble(data, snap, false))
    }

    pub fn finish(self) -> PosteriorDraws {
        let mut acceptance = self.snap.cell_stats;
        for gb in &self.snap.genes {
            acceptance.merge(&gb.stats);
        }
        PosteriorDraws {
            config: self.snap.config,
            group_of_subgroup: self.data.group_of_subgroup.clone(),
            draws: self.snap.draws,
            log_posterior: self.snap.log_posterior,
            log_likelihood: self.snap.log_likelihood,
            pointwise: self.snap.pointwise,
            loglik: self.snap.loglik,
            acceptance,
        }
    }
}

fn thread_pool(threads: usize) -> Option<rayon::ThreadPool> {
    (threads > 0)
        .then(|| rayon::ThreadPoolBuilder::new().num_threads(threads).build().ok())
        .flatten()
}

fn check_initial(state: &ModelState, data: &Dataset) -> Result<()> {
    state.check_shape(data.n_cells(), data.n_groups(), data.n_subgroups())?;
    let bad = |block: String| Err(Error::InvalidInitialization { block });
    let a = state.hyper.a;
    for (g, gp) in state.genes.iter().enumerate() {
        if !coords_logprior(gp, a).is_finite() {
            return bad(format!("coords (gene {g})"));
        }
        if !eta_logprior(gp.eta).is_finite() {
            return bad(format!("eta (gene {g})"));
        }
    }
    let n_genes = state.n_genes();
    for (i, &u) in state.u_sw.iter().enumerate() {
        let gp = &state.genes[i % n_genes];
        if !switch_logprior(u, gp.u_off, gp.u_on).is_finite() {
            return bad(format!("switch (group {}, gene {})", i / n_genes, i % n_genes));
        }
    }
    for (i, &phi) in state.phi.iter().enumerate() {
        if !phi_logprior(phi).is_finite() || phi >= TWO_PI {
            return bad(format!("phi (subgroup {}, gene {})", i / n_genes, i % n_genes));
        }
    }
    for (c, &l) in state.lambda.iter().enumerate() {
        if !lambda_logprior(l).is_finite() {
            return bad(format!("lambda (cell {c})"));
        }
    }
    Ok(())
}

/// Runs a chain to completion.
pub fn run_chain(data: &Dataset, cfg: &ChainConfig, init: Init) -> Result<PosteriorDraws> {
    let mut chain = Chain::new(data, cfg.clone(), init)?;
    chain.advance(cfg.n_iter);
    Ok(chain.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{loglik_matrix, CountMatrix};

    fn toy() -> Dataset {
        let s = CountMatrix::from_rows(&[vec![3, 0], vec![5, 1], vec![0, 0], vec![9, 2]]).unwrap();
        let u = CountMatrix::from_rows(&[vec![1, 0], vec![4, 2], vec![1, 0], vec![2, 1]]).unwrap();
        Dataset::new(s, u, vec![0, 0, 1, 1], vec![0, 0, 1, 2]).unwrap()
    }

    fn short(seed: u64) -> ChainConfig {
        let mut cfg = ChainConfig::new(600, 300, 10, seed).unwrap();
        cfg.adapt_start = 20;
        cfg
    }

    #[test]
    fn unconstrained_round_trip() {
        let gp = GeneParams {
            u_off: 1.0,
            u_on: 7.0,
            s_on: 4.0,
            eta: 0.2,
        };
        let (back, _) = from_unconstrained(&to_unconstrained(&gp, 20.0), 20.0, 0.2);
        assert!((back.u_off - 1.0).abs() < 1e-12);
        assert!((back.u_on - 7.0).abs() < 1e-12);
        assert!((back.s_on - 4.0).abs() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let a = 20.0;
        let y = [-1.2, 0.4, 0.3];
        let (_, lj) = from_unconstrained(&y, a, 0.1);
        let h = 1e-6;
        let mut jac = [[0.0; 3]; 3];
        for j in 0..3 {
            let mut yp = y;
            let mut ym = y;
            yp[j] += h;
            ym[j] -= h;
            let (p, _) = from_unconstrained(&yp, a, 0.1);
            let (m, _) = from_unconstrained(&ym, a, 0.1);
            jac[0][j] = (p.u_off - m.u_off) / (2.0 * h);
            jac[1][j] = (p.u_on - m.u_on) / (2.0 * h);
            jac[2][j] = (p.s_on - m.s_on) / (2.0 * h);
        }
        let det = jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
            - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
            + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0]);
        assert!((det.ln() - (lj + 2.0 * a.ln())).abs() < 1e-6);
    }

    #[test]
    fn cached_terms_match_likelihood() {
        let data = toy();
        let mut chain = Chain::new(&data, short(1), Init::Auto(Hyper::new(30.0, 1.5).unwrap())).unwrap();
        chain.advance(150);
        let direct = loglik_matrix(&chain.state(), &data).unwrap();
        for (a, b) in chain.pointwise_loglik().iter().zip(&direct) {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn deterministic_and_resumable() {
        let data = toy();
        let hyper = Hyper::new(30.0, Hyper::DEFAULT_SECTOR).unwrap();
        let a = run_chain(&data, &short(7), Init::Auto(hyper)).unwrap();
        let b = run_chain(&data, &short(7), Init::Auto(hyper)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);

        let mut chain = Chain::new(&data, short(7), Init::Auto(hyper)).unwrap();
        chain.advance(333);
        let bytes = chain.checkpoint().unwrap();
        let mut resumed = Chain::resume(&data, &bytes).unwrap();
        resumed.advance(usize::MAX);
        assert_eq!(resumed.finish(), a);

        let c = run_chain(&data, &short(8), Init::Auto(hyper)).unwrap();
        assert_ne!(a.draws, c.draws);
    }

    #[test]
    fn reports_bad_initial_block() {
        let data = toy();
        let mut s = initial_state(&data, Hyper::new(30.0, 1.5).unwrap());
        s.lambda[2] = 1.5;
        let err = Chain::new(&data, short(1), Init::State(s.clone())).err().unwrap();
        assert!(err.to_string().contains("lambda (cell 2)"), "{err}");
        s.lambda[2] = 0.5;
        s.u_sw[1] = s.genes[1].u_on + 1.0;
        let err = Chain::new(&data, short(1), Init::State(s)).err().unwrap();
        assert!(err.to_string().contains("switch (group 0, gene 1)"), "{err}");
    }
}
