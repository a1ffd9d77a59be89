//! Posterior summaries and evaluation against a known truth: error and
//! coverage tables, WAIC, MAP / median point estimates, PCA projections of
//! counts and velocity arrows, and data-driven subgroups.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::velocity;
use crate::model::{CountMatrix, ModelState, BETA};
use crate::sampler::PosteriorDraws;
use crate::stats::{median, quantile_sorted};

/// Default time step for velocity arrows.
pub const DEFAULT_DT: f64 = 0.001;

/// Parameter families reported in summary tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    UOff,
    SOff,
    UOn,
    SOn,
    USwitch,
    SSwitch,
    UTilde,
    STilde,
    Velocity,
    Eta,
    Lambda,
}

impl Family {
    pub const ALL: [Family; 11] = [
        Family::UOff,
        Family::SOff,
        Family::UOn,
        Family::SOn,
        Family::USwitch,
        Family::SSwitch,
        Family::UTilde,
        Family::STilde,
        Family::Velocity,
        Family::Eta,
        Family::Lambda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::UOff => "u_off",
            Family::SOff => "s_off",
            Family::UOn => "u_on",
            Family::SOn => "s_on",
            Family::USwitch => "u_switch",
            Family::SSwitch => "s_switch",
            Family::UTilde => "u_tilde",
            Family::STilde => "s_tilde",
            Family::Velocity => "velocity",
            Family::Eta => "eta",
            Family::Lambda => "lambda",
        }
    }

    fn index(self) -> usize {
        Family::ALL.iter().position(|&f| f == self).expect("listed")
    }
}

/// Every family's values for one state, in [`Family::ALL`] order. Per-(k, g)
/// entries are `k * G + g`, per-(r, g) entries `r * G + g`.
pub fn family_values(state: &ModelState, group_of_subgroup: &[usize]) -> Vec<Vec<f64>> {
    let n_genes = state.n_genes();
    let switches = state.switch_points();
    let positions = state.positions(group_of_subgroup);
    let vel: Vec<f64> = positions
        .iter()
        .enumerate()
        .map(|(i, p)| velocity(*p, BETA, state.genes[i % n_genes].gamma()))
        .collect();
    vec![
        state.genes.iter().map(|g| g.u_off).collect(),
        state.genes.iter().map(|g| g.s_off()).collect(),
        state.genes.iter().map(|g| g.u_on).collect(),
        state.genes.iter().map(|g| g.s_on).collect(),
        switches.iter().map(|p| p.u).collect(),
        switches.iter().map(|p| p.s).collect(),
        positions.iter().map(|p| p.u).collect(),
        positions.iter().map(|p| p.s).collect(),
        vel,
        state.genes.iter().map(|g| g.eta).collect(),
        state.lambda.clone(),
    ]
}

/// `|(estimate - truth) / truth|`, undefined for a zero truth.
pub fn relative_error(estimate: f64, truth: f64) -> Option<f64> {
    (truth != 0.0).then(|| ((estimate - truth) / truth).abs())
}

pub fn absolute_error(estimate: f64, truth: f64) -> f64 {
    (estimate - truth).abs()
}

/// Median relative error over paired entries, skipping zero truths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeErrorSummary {
    /// `None` when every truth is zero.
    pub median: Option<f64>,
    pub excluded: usize,
}

pub fn median_relative_error(estimates: &[f64], truths: &[f64]) -> RelativeErrorSummary {
    let errs: Vec<f64> = estimates
        .iter()
        .zip(truths)
        .filter_map(|(&e, &t)| relative_error(e, t))
        .collect();
    RelativeErrorSummary {
        median: (!errs.is_empty()).then(|| median(&errs)),
        excluded: truths.len() - errs.len(),
    }
}

/// Equal-tailed credible interval.
pub fn credible_interval(draws: &[f64], level: f64) -> Result<(f64, f64)> {
    if draws.len() < 2 {
        return Err(Error::Undefined(format!("credible interval needs >= 2 draws, got {}", draws.len())));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("level {level} outside (0, 1)")));
    }
    let mut v = draws.to_vec();
    v.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&v, tail), quantile_sorted(&v, 1.0 - tail)))
}

/// Fraction of truths inside their (closed) interval.
pub fn coverage(intervals: &[(f64, f64)], truths: &[f64]) -> f64 {
    let hits = intervals
        .iter()
        .zip(truths)
        .filter(|((lo, hi), t)| lo <= *t && *t <= hi)
        .count();
    hits as f64 / truths.len() as f64
}

pub fn median_length(intervals: &[(f64, f64)]) -> f64 {
    median(&intervals.iter().map(|(lo, hi)| hi - lo).collect::<Vec<_>>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub family: Family,
    pub n: usize,
    pub median_relative_error: Option<f64>,
    pub zero_truth_excluded: usize,
    pub median_absolute_error: f64,
    pub coverage: f64,
    pub median_ci_length: f64,
}

/// Per-family accuracy of posterior medians and calibration of credible
/// intervals against a known truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub level: f64,
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn row(&self, family: Family) -> &SummaryRow {
        &self.rows[family.index()]
    }
}

/// Draws of every family: `[family][entry][draw]`.
pub fn family_draws(draws: &PosteriorDraws) -> Vec<Vec<Vec<f64>>> {
    let per_draw: Vec<Vec<Vec<f64>>> = draws
        .draws
        .iter()
        .map(|s| family_values(s, &draws.group_of_subgroup))
        .collect();
    (0..Family::ALL.len())
        .map(|f| {
            let n = per_draw.first().map_or(0, |d| d[f].len());
            (0..n).map(|i| per_draw.iter().map(|d| d[f][i]).collect()).collect()
        })
        .collect()
}

pub fn summary_table(draws: &PosteriorDraws, truth: &ModelState, level: f64) -> Result<SummaryTable> {
    let fam = family_draws(draws);
    let truths = family_values(truth, &draws.group_of_subgroup);
    let mut rows = Vec::with_capacity(Family::ALL.len());
    for (f, family) in Family::ALL.into_iter().enumerate() {
        if fam[f].len() != truths[f].len() {
            return Err(Error::DimensionMismatch(format!(
                "{}: {} estimated entries, {} true",
                family.name(),
                fam[f].len(),
                truths[f].len()
            )));
        }
        let est: Vec<f64> = fam[f].iter().map(|d| median(d)).collect();
        let intervals = fam[f]
            .iter()
            .map(|d| credible_interval(d, level))
            .collect::<Result<Vec<_>>>()?;
        let rel = median_relative_error(&est, &truths[f]);
        let abs: Vec<f64> = est.iter().zip(&truths[f]).map(|(&e, &t)| absolute_error(e, t)).collect();
        rows.push(SummaryRow {
            family,
            n: est.len(),
            median_relative_error: rel.median,
            zero_truth_excluded: rel.excluded,
            median_absolute_error: median(&abs),
            coverage: coverage(&intervals, &truths[f]),
            median_ci_length: median_length(&intervals),
        });
    }
    Ok(SummaryTable { level, rows })
}

/// Widely applicable information criterion with the variance penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waic {
    pub waic: f64,
    pub lppd: f64,
    pub p_waic: f64,
    pub n_draws: usize,
    pub n_points: usize,
}

fn waic_from_parts(lme: &[f64], var: &[f64], n_draws: usize) -> Result<Waic> {
    if n_draws < 2 {
        return Err(Error::Undefined(format!("WAIC needs >= 2 draws, got {n_draws}")));
    }
    let lppd: f64 = lme.iter().sum();
    let p_waic: f64 = var.iter().sum();
    if !(lppd.is_finite() && p_waic.is_finite()) {
        return Err(Error::Undefined("non-finite pointwise log-likelihood".into()));
    }
    Ok(Waic {
        waic: -2.0 * (lppd - p_waic),
        lppd,
        p_waic,
        n_draws,
        n_points: lme.len(),
    })
}

/// WAIC from a draws x observations log-likelihood matrix.
pub fn waic_from_matrix(loglik: &[Vec<f64>]) -> Result<Waic> {
    let n_draws = loglik.len();
    let n_points = loglik.first().map_or(0, Vec::len);
    if loglik.iter().any(|r| r.len() != n_points) {
        return Err(Error::DimensionMismatch("ragged log-likelihood matrix".into()));
    }
    let mut acc = crate::sampler::PointwiseAccumulator::new(n_points);
    for row in loglik {
        acc.push(row);
    }
    waic_from_parts(&acc.log_mean_exp(), &acc.variances(), n_draws)
}

/// WAIC from the chain's streaming pointwise summaries.
pub fn waic(draws: &PosteriorDraws) -> Result<Waic> {
    let acc = &draws.pointwise;
    waic_from_parts(&acc.log_mean_exp(), &acc.variances(), acc.n_draws())
}

/// Retained draw with the highest log-posterior (first on ties).
pub fn map_estimate(draws: &PosteriorDraws) -> Result<ModelState> {
    let mut best: Option<usize> = None;
    for (i, &lp) in draws.log_posterior.iter().enumerate() {
        if best.is_none_or(|b| lp > draws.log_posterior[b]) {
            best = Some(i);
        }
    }
    best.map(|i| draws.draws[i].clone())
        .ok_or_else(|| Error::Undefined("no retained draws".into()))
}

/// Componentwise posterior median of the parameters.
pub fn posterior_median(draws: &PosteriorDraws) -> Result<ModelState> {
    let first = draws.draws.first().ok_or_else(|| Error::Undefined("no retained draws".into()))?;
    let med = |get: &dyn Fn(&ModelState) -> f64| median(&draws.draws.iter().map(get).collect::<Vec<_>>());
    let mut out = first.clone();
    for g in 0..out.genes.len() {
        out.genes[g].u_off = med(&|s| s.genes[g].u_off);
        out.genes[g].u_on = med(&|s| s.genes[g].u_on);
        out.genes[g].s_on = med(&|s| s.genes[g].s_on);
        out.genes[g].eta = med(&|s| s.genes[g].eta);
    }
    for i in 0..out.u_sw.len() {
        out.u_sw[i] = med(&|s| s.u_sw[i]);
    }
    for i in 0..out.phi.len() {
        out.phi[i] = med(&|s| s.phi[i]);
    }
    for c in 0..out.lambda.len() {
        out.lambda[c] = med(&|s| s.lambda[c]);
    }
    Ok(out)
}

/// Principal-component projection fitted on a rows x columns matrix.
///
/// Matrices are row-major; `loadings` is columns x d and `scores` rows x d.
/// Each loading vector is signed so its largest-magnitude entry is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub n_components: usize,
    pub center: Vec<f64>,
    pub loadings: Vec<f64>,
    pub scores: Vec<f64>,
    /// Variance along each component.
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
}

impl ProjectionResult {
    pub fn n_features(&self) -> usize {
        self.center.len()
    }

    /// Projects row-major points with the fitted centering and loadings.
    pub fn project(&self, rows: &[f64]) -> Result<Vec<f64>> {
        let p = self.n_features();
        if p == 0 || !rows.len().is_multiple_of(p) {
            return Err(Error::DimensionMismatch(format!("{} values are not rows of length {p}", rows.len())));
        }
        let d = self.n_components;
        let mut out = vec![0.0; rows.len() / p * d];
        for (i, row) in rows.chunks(p).enumerate() {
            for (j, (x, m)) in row.iter().zip(&self.center).enumerate() {
                let centered = x - m;
                for k in 0..d {
                    out[i * d + k] += centered * self.loadings[j * d + k];
                }
            }
        }
        Ok(out)
    }
}

/// PCA of a row-major `n_rows x n_cols` matrix: columns are centred (not
/// scaled) and the top `d` right singular vectors become the loadings.
pub fn pca_project(matrix: &[f64], n_rows: usize, n_cols: usize, d: usize) -> Result<ProjectionResult> {
    if matrix.len() != n_rows * n_cols {
        return Err(Error::DimensionMismatch(format!("{} values for {n_rows} x {n_cols}", matrix.len())));
    }
    if d == 0 {
        return Err(Error::InvalidParameter("need at least one component".into()));
    }
    if n_rows == 0 || n_cols == 0 {
        return Err(Error::RankDeficient { requested: d, rank: 0 });
    }
    let mut center = vec![0.0; n_cols];
    for row in matrix.chunks(n_cols) {
        for (m, x) in center.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut center {
        *m /= n_rows as f64;
    }
    let centered = DMatrix::from_fn(n_rows, n_cols, |i, j| matrix[i * n_cols + j] - center[j]);
    let svd = centered.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let top = order.first().map_or(0.0, |&i| svd.singular_values[i]);
    let tol = top * (n_rows.max(n_cols) as f64) * f64::EPSILON;
    let rank = order.iter().filter(|&&i| svd.singular_values[i] > tol).count();
    if d > rank {
        return Err(Error::RankDeficient { requested: d, rank });
    }

    let mut loadings = vec![0.0; n_cols * d];
    for (k, &i) in order.iter().take(d).enumerate() {
        let row = v_t.row(i);
        let pivot = row.iter().copied().fold(0.0, |best: f64, x| if x.abs() > best.abs() { x } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n_cols {
            loadings[j * d + k] = sign * row[j];
        }
    }
    let denom = (n_rows as f64 - 1.0).max(1.0);
    let explained_variance = order.iter().take(d).map(|&i| svd.singular_values[i].powi(2) / denom).collect();
    let total_variance = centered.iter().map(|x| x * x).sum::<f64>() / denom;
    let mut out = ProjectionResult {
        n_components: d,
        center,
        loadings,
        scores: Vec::new(),
        explained_variance,
        total_variance,
    };
    out.scores = out.project(matrix)?;
    Ok(out)
}

/// PCA of the spliced counts, cells as rows.
pub fn pca_counts(counts: &CountMatrix, d: usize) -> Result<ProjectionResult> {
    let m: Vec<f64> = counts.as_slice().iter().map(|&v| f64::from(v)).collect();
    pca_project(&m, counts.n_cells(), counts.n_genes(), d)
}

/// `s + v dt`, elementwise.
pub fn future_state(s: &[f64], v: &[f64], dt: f64) -> Result<Vec<f64>> {
    if s.len() != v.len() {
        return Err(Error::DimensionMismatch(format!("{} states, {} velocities", s.len(), v.len())));
    }
    Ok(s.iter().zip(v).map(|(s, v)| s + v * dt).collect())
}

/// Projected current and future states of row-major `(s, v)` pairs.
pub fn project_arrows(pca: &ProjectionResult, s: &[f64], v: &[f64], dt: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let now = pca.project(s)?;
    let future = pca.project(&future_state(s, v, dt)?)?;
    Ok((now, future))
}

/// Splits every group into subgroups by Ward clustering of its cells' first
/// two principal components of the counts. A split is kept only if both
/// sides have at least `min_size` cells. Returns globally numbered subgroup
/// labels (group by group, in order of first cell).
pub fn derive_subgroups(counts: &CountMatrix, groups: &[usize], min_size: usize) -> Result<Vec<usize>> {
    if groups.len() != counts.n_cells() {
        return Err(Error::DimensionMismatch(format!(
            "{} group labels for {} cells",
            groups.len(),
            counts.n_cells()
        )));
    }
    let n_groups = groups.iter().max().map_or(0, |m| m + 1);
    let mut labels = vec![usize::MAX; groups.len()];
    let mut next = 0;
    for k in 0..n_groups {
        let cells: Vec<usize> = (0..groups.len()).filter(|&c| groups[c] == k).collect();
        if cells.is_empty() {
            continue;
        }
        let local = split_cells(counts, &cells, min_size)?;
        // Renumber in order of first appearance.
        let mut map = std::collections::HashMap::new();
        for (&c, &l) in cells.iter().zip(&local) {
            let id = *map.entry(l).or_insert_with(|| {
                next += 1;
                next - 1
            });
            labels[c] = id;
        }
    }
    Ok(labels)
}

fn split_cells(counts: &CountMatrix, cells: &[usize], min_size: usize) -> Result<Vec<usize>> {
    let n = cells.len();
    if n < 2 * min_size.max(1) {
        return Ok(vec![0; n]);
    }
    let p = counts.n_genes();
    let m: Vec<f64> = cells
        .iter()
        .flat_map(|&c| counts.row(c).iter().map(|&v| f64::from(v)))
        .collect();
    let d = match pca_project(&m, n, p, 2) {
        Ok(_) => 2,
        Err(Error::RankDeficient { rank, .. }) => rank.min(2),
        Err(e) => return Err(e),
    };
    if d == 0 {
        return Ok(vec![0; n]);
    }
    let scores = pca_project(&m, n, p, d)?.scores;
    let mut condensed = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let dist2: f64 = (0..d).map(|k| (scores[i * d + k] - scores[j * d + k]).powi(2)).sum();
            condensed.push(dist2.sqrt());
        }
    }
    let dendro = kodama::linkage(&mut condensed, n, kodama::Method::Ward);

    // Node ids: leaves 0..n, merge i creates node n + i.
    let steps = dendro.steps();
    let size = |node: usize| if node < n { 1 } else { steps[node - n].size };
    let mut leaves = Vec::new();
    let mut stack = vec![if steps.is_empty() { 0 } else { n + steps.len() - 1 }];
    while let Some(node) = stack.pop() {
        if node < n {
            leaves.push(node);
            continue;
        }
        let st = &steps[node - n];
        if size(st.cluster1) >= min_size && size(st.cluster2) >= min_size {
            stack.push(st.cluster2);
            stack.push(st.cluster1);
        } else {
            leaves.push(node);
        }
    }
    let mut out = vec![0; n];
    for (label, &root) in leaves.iter().enumerate() {
        let mut stack = vec![root];
        while let Some(node) = stack.pop() {
            if node < n {
                out[node] = label;
            } else {
                stack.push(steps[node - n].cluster1);
                stack.push(steps[node - n].cluster2);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(1.0, 1.0), Some(0.0));
        assert_eq!(relative_error(2.0, 1.0), Some(1.0));
        assert_eq!(relative_error(2.0, 0.0), None);
        let s = median_relative_error(&[1.0, 3.0, 5.0], &[0.0, 0.0, 0.0]);
        assert_eq!((s.median, s.excluded), (None, 3));
    }

    #[test]
    fn constant_chain_interval() {
        let ci = credible_interval(&[2.0; 10], 0.95).unwrap();
        assert_eq!(ci, (2.0, 2.0));
        assert_eq!(coverage(&[ci], &[2.0]), 1.0);
        assert_eq!(coverage(&[ci], &[2.1]), 0.0);
        assert!(credible_interval(&[1.0], 0.95).is_err());
    }

    #[test]
    fn waic_identical_draws() {
        let w = waic_from_matrix(&[vec![-1.0, -2.0], vec![-1.0, -2.0]]).unwrap();
        assert_eq!(w.p_waic, 0.0);
        assert!((w.waic - 6.0).abs() < 1e-12);
        assert!(waic_from_matrix(&[vec![-1.0]]).is_err());
    }

    #[test]
    fn rank_one_pca() {
        let m: Vec<f64> = (0..6).flat_map(|i| [f64::from(i), 2.0 * f64::from(i), -f64::from(i)]).collect();
        let p = pca_project(&m, 6, 3, 1).unwrap();
        assert!((p.explained_variance[0] / p.total_variance - 1.0).abs() < 1e-12);
        assert!(matches!(pca_project(&m, 6, 3, 2), Err(Error::RankDeficient { rank: 1, .. })));
    }

    #[test]
    fn future_state_trivial() {
        assert_eq!(future_state(&[1.0, 2.0], &[0.0, 0.0], 0.5).unwrap(), vec![1.0, 2.0]);
        assert_eq!(future_state(&[1.0, 2.0], &[3.0, 1.0], 0.0).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn small_type_stays_whole() {
        let counts = CountMatrix::new(29, 2, (0..58).collect()).unwrap();
        let labels = derive_subgroups(&counts, &[0; 29], 30).unwrap();
        assert!(labels.iter().all(|&l| l == 0));
    }
}
