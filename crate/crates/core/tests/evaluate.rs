use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use velocity_core::evaluate::{
    coverage, credible_interval, derive_subgroups, family_values, future_state, map_estimate, median_relative_error,
    pca_project, posterior_median, project_arrows, waic, waic_from_matrix, Family,
};
use velocity_core::kinetics::velocity;
use velocity_core::model::{CountMatrix, Hyper, BETA};
use velocity_core::sampler::{run_chain, ChainConfig, Init, PosteriorDraws};
use velocity_core::simulate::{gen_counts_nb, gen_parameters, Scenario};

fn fitted() -> PosteriorDraws {
    let sc = Scenario::new(6, 40, 2, 4, 5, 13).unwrap();
    let data = gen_counts_nb(&gen_parameters(&sc).unwrap()).unwrap();
    let hyper = Hyper::new(data.default_bound(), Hyper::DEFAULT_SECTOR).unwrap();
    let mut cfg = ChainConfig::new(300, 150, 3, 2).unwrap();
    cfg.store_loglik = true;
    run_chain(&data, &cfg, Init::Auto(hyper)).unwrap()
}

#[test]
fn relative_error_medians() {
    let s = median_relative_error(&[1.0, 2.0, 4.0, 9.0], &[1.0, 1.0, 0.0, 10.0]);
    assert_eq!(s.excluded, 1);
    assert!((s.median.unwrap() - 0.1).abs() < 1e-15);
}

#[test]
fn normal_interval_calibration() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let law = Normal::new(3.0, 2.0).unwrap();
    let reps = 1000;
    let mut hits = 0;
    for _ in 0..reps {
        let draws: Vec<f64> = (0..2000).map(|_| law.sample(&mut rng)).collect();
        // The draws play the posterior; the truth is a fresh draw from it.
        let truth = law.sample(&mut rng);
        let ci = credible_interval(&draws, 0.95).unwrap();
        hits += usize::from(coverage(&[ci], &[truth]) == 1.0);
    }
    let rate = hits as f64 / reps as f64;
    assert!((rate - 0.95).abs() <= 0.02, "{rate}");
}

#[test]
fn three_draw_waic_by_hand() {
    let m = vec![vec![-1.0, -2.0], vec![-1.5, -1.0], vec![-0.5, -3.0]];
    let mut lppd = 0.0;
    let mut p = 0.0;
    for j in 0..2 {
        let col: Vec<f64> = m.iter().map(|r| r[j]).collect();
        lppd += (col.iter().map(|v| v.exp()).sum::<f64>() / 3.0).ln();
        let mean = col.iter().sum::<f64>() / 3.0;
        p += col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0;
    }
    let w = waic_from_matrix(&m).unwrap();
    assert!((w.lppd - lppd).abs() < 1e-12);
    assert!((w.p_waic - p).abs() < 1e-12);
    assert!((w.waic + 2.0 * (lppd - p)).abs() < 1e-12);
}

#[test]
fn identical_draws_have_no_penalty() {
    let w = waic_from_matrix(&vec![vec![-0.3, -4.0, -1.0]; 5]).unwrap();
    assert_eq!(w.p_waic, 0.0);
    assert!((w.waic - 2.0 * 5.3).abs() < 1e-12);
}

#[test]
fn streaming_waic_matches_the_stored_matrix() {
    let d = fitted();
    let a = waic(&d).unwrap();
    let b = waic_from_matrix(d.loglik.as_ref().unwrap()).unwrap();
    assert!((a.waic - b.waic).abs() < 1e-9 * b.waic.abs());
}

#[test]
fn point_estimates() {
    let d = fitted();
    let map = map_estimate(&d).unwrap();
    let best = d.log_posterior.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let i = d.log_posterior.iter().position(|&v| v == best).unwrap();
    assert_eq!(map, d.draws[i]);

    let mut two = d.clone();
    two.draws.truncate(2);
    two.log_posterior.truncate(2);
    let med = posterior_median(&two).unwrap();
    let (a, b) = (&two.draws[0], &two.draws[1]);
    assert_eq!(med.genes[3].u_on, 0.5 * (a.genes[3].u_on + b.genes[3].u_on));
    assert_eq!(med.lambda[7], 0.5 * (a.lambda[7] + b.lambda[7]));

    let mut one = d.clone();
    one.draws.truncate(1);
    one.log_posterior.truncate(1);
    assert_eq!(posterior_median(&one).unwrap(), one.draws[0]);
}

#[test]
fn draw_velocities_are_kinetic_velocities() {
    let d = fitted();
    let vi = Family::ALL.iter().position(|&f| f == Family::Velocity).unwrap();
    let (ui, si) = (
        Family::ALL.iter().position(|&f| f == Family::UTilde).unwrap(),
        Family::ALL.iter().position(|&f| f == Family::STilde).unwrap(),
    );
    for state in &d.draws {
        let v = family_values(state, &d.group_of_subgroup);
        for (i, &vel) in v[vi].iter().enumerate() {
            let gp = state.genes[i % state.n_genes()];
            let gamma = gp.u_on / gp.s_on;
            let pos = velocity_core::kinetics::Position::new(v[si][i], v[ui][i]);
            assert_eq!(vel, velocity(pos, BETA, gamma));
        }
    }
}

#[test]
fn rank_one_matrix_is_one_component() {
    let dir = [1.0, -2.0, 0.5, 3.0];
    let m: Vec<f64> = (0..10).flat_map(|i| dir.map(|x| x * f64::from(i) + 1.0)).collect();
    let p = pca_project(&m, 10, 4, 1).unwrap();
    assert!((p.explained_variance[0] / p.total_variance - 1.0).abs() < 1e-12);
    assert!(pca_project(&m, 10, 4, 2).is_err());
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let law = Normal::new(5.0, 2.0).unwrap();
    (0..rows * cols).map(|_| law.sample(&mut rng)).collect()
}

#[test]
fn scores_are_centered_data_times_loadings() {
    let (n, p, d) = (30, 6, 3);
    let m = random_matrix(n, p, 1);
    let r = pca_project(&m, n, p, d).unwrap();
    for i in 0..n {
        for k in 0..d {
            let direct: f64 = (0..p).map(|j| (m[i * p + j] - r.center[j]) * r.loadings[j * d + k]).sum();
            assert!((direct - r.scores[i * d + k]).abs() < 1e-10);
        }
    }
    // Loadings are orthonormal.
    for a in 0..d {
        for b in 0..d {
            let dot: f64 = (0..p).map(|j| r.loadings[j * d + a] * r.loadings[j * d + b]).sum();
            assert!((dot - f64::from(u8::from(a == b))).abs() < 1e-12);
        }
    }
}

#[test]
fn capture_family_projects_onto_a_line() {
    let (n, p) = (25, 5);
    let mut m = random_matrix(n, p, 2);
    let s_tilde = [4.0, 9.0, 1.0, 6.0, 2.5];
    let lambdas = [0.6, 0.8, 1.0, 1.3, 1.7, 2.2];
    let family: Vec<f64> = lambdas.iter().flat_map(|l| s_tilde.map(|s| l * s)).collect();
    m.extend_from_slice(&family);
    let r = pca_project(&m, n + lambdas.len(), p, 2).unwrap();
    let pts = r.project(&family).unwrap();
    let (x0, y0) = (pts[0], pts[1]);
    let (dx, dy) = (pts[2] - x0, pts[3] - y0);
    let norm = dx.hypot(dy);
    for k in 2..lambdas.len() {
        let (ex, ey) = (pts[2 * k] - x0, pts[2 * k + 1] - y0);
        assert!((ex * dy - ey * dx).abs() / norm < 1e-8);
    }
}

#[test]
fn arrows_are_unchanged_by_zero_velocity_or_step() {
    let m = random_matrix(20, 4, 3);
    let r = pca_project(&m, 20, 4, 2).unwrap();
    let s = &m[..8];
    let (now, fut) = project_arrows(&r, s, &[0.0; 8], 0.01).unwrap();
    assert_eq!(now, fut);
    let v = random_matrix(2, 4, 4);
    let (now, fut) = project_arrows(&r, s, &v, 0.0).unwrap();
    assert_eq!(now, fut);
    assert!(future_state(s, &v[..3], 0.1).is_err());
}

fn blobs(per_blob: usize, seed: u64) -> CountMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 3.0).unwrap();
    let mut data = Vec::new();
    for c in 0..2 * per_blob {
        let base: f64 = if c < per_blob { 20.0 } else { 200.0 };
        for _ in 0..5 {
            data.push((base + noise.sample(&mut rng)).round().max(0.0) as u32);
        }
    }
    CountMatrix::new(2 * per_blob, 5, data).unwrap()
}

#[test]
fn separated_blobs_give_two_subgroups() {
    // With a minimum size above half a blob, no blob can be split further.
    let counts = blobs(100, 5);
    let labels = derive_subgroups(&counts, &[0; 200], 51).unwrap();
    assert!(labels[..100].iter().all(|&l| l == labels[0]));
    assert!(labels[100..].iter().all(|&l| l == labels[100]));
    assert_ne!(labels[0], labels[100]);

    // At the default size, blobs may be split internally but are never mixed.
    let labels = derive_subgroups(&counts, &[0; 200], 30).unwrap();
    for l in 0..=*labels.iter().max().unwrap() {
        let members: Vec<usize> = (0..200).filter(|&c| labels[c] == l).collect();
        assert!(members.len() >= 30);
        assert!(members.iter().all(|&c| c < 100) || members.iter().all(|&c| c >= 100));
    }
}

#[test]
fn small_types_stay_whole() {
    let counts = blobs(50, 6);
    let mut groups = vec![0; 100];
    groups[71..].iter_mut().for_each(|g| *g = 1);
    let labels = derive_subgroups(&counts, &groups, 30).unwrap();
    // The 29-cell type is one subgroup.
    assert!(labels[71..].iter().all(|&l| l == labels[71]));
    // Subgroups refine groups.
    for c in 0..100 {
        for d in 0..100 {
            if labels[c] == labels[d] {
                assert_eq!(groups[c], groups[d]);
            }
        }
    }
}

proptest! {
    #[test]
    fn projection_is_affine(seed in 0u64..1000, t in 0.0..1.0f64) {
        let m = random_matrix(15, 4, seed);
        let r = pca_project(&m, 15, 4, 2).unwrap();
        let (a, b) = (&m[..4], &m[4..8]);
        let mix: Vec<f64> = a.iter().zip(b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
        let (pa, pb, pm) = (r.project(a).unwrap(), r.project(b).unwrap(), r.project(&mix).unwrap());
        for k in 0..2 {
            prop_assert!((pm[k] - (t * pa[k] + (1.0 - t) * pb[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn arrow_direction_ignores_dt(seed in 0u64..1000, dt in 1e-4..1.0f64) {
        let m = random_matrix(15, 4, seed);
        let r = pca_project(&m, 15, 4, 2).unwrap();
        let v = random_matrix(1, 4, seed + 1);
        let angle = |dt: f64| {
            let (now, fut) = project_arrows(&r, &m[..4], &v, dt).unwrap();
            (fut[1] - now[1]).atan2(fut[0] - now[0])
        };
        prop_assert!((angle(dt) - angle(1e-3)).abs() < 1e-9);
    }
}
