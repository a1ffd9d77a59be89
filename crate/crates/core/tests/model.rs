mod common;

use proptest::prelude::*;
use velocity_core::geometry::{coords_to_rates, position_to_time, switching_u_to_omega, AngularPosition};
use velocity_core::kinetics::solve_elapsed;
use velocity_core::model::{
    log_likelihood, log_posterior, log_prior, loglik_matrix, nb_logpmf, rescale_capture, scale_capture, CountMatrix,
    Dataset, GeneParams, Hyper, ModelState, BETA,
};

use common::nb_logpmf_oracle;

fn gene(u_off: f64, u_on: f64, s_on: f64, eta: f64) -> GeneParams {
    GeneParams { u_off, u_on, s_on, eta }
}

/// Three cells in two subgroups of one group, two genes.
fn small() -> (ModelState, Dataset) {
    let state = ModelState {
        hyper: Hyper::new(30.0, 1.0).unwrap(),
        genes: vec![gene(1.0, 9.0, 12.0, 0.4), gene(0.5, 4.0, 3.0, 0.0)],
        u_sw: vec![6.0, 2.0],
        phi: vec![0.8, 3.1, 5.7, 5.9],
        lambda: vec![0.9, 0.4, 0.7],
    };
    let s = CountMatrix::from_rows(&[vec![3, 1], vec![0, 2], vec![7, 0]]).unwrap();
    let u = CountMatrix::from_rows(&[vec![5, 0], vec![1, 1], vec![2, 4]]).unwrap();
    let data = Dataset::new(s, u, vec![0, 0, 0], vec![0, 1, 1]).unwrap();
    (state, data)
}

/// Cell-by-cell likelihood via explicit times and the ODE solution.
fn brute_force(state: &ModelState, data: &Dataset) -> f64 {
    let mut total = 0.0;
    for c in 0..data.n_cells() {
        let r = data.subgroup_of_cell[c];
        let k = data.group_of_subgroup[r];
        for (g, gp) in state.genes.iter().enumerate() {
            let coords = gp.coords(state.hyper.a);
            let ap = AngularPosition::new(state.phi(r, g), state.hyper.p).unwrap();
            let u_sw = state.u_sw(k, g);
            let t = position_to_time(&ap, u_sw, &coords, BETA).unwrap();
            let (theta, s_off) = coords_to_rates(&coords, BETA).unwrap();
            let (s, u) = if t.is_infinite() {
                (s_off, gp.u_off)
            } else {
                let omega = switching_u_to_omega(u_sw, &coords, BETA).unwrap();
                let p = solve_elapsed(t, omega, &theta);
                (p.s, p.u)
            };
            let lam = state.lambda[c];
            total += nb_logpmf_oracle(data.spliced.get(c, g), lam * s, gp.eta)
                + nb_logpmf_oracle(data.unspliced.get(c, g), lam * u, gp.eta);
        }
    }
    total
}

#[test]
fn nb_examples() {
    assert!((nb_logpmf(0, 1.0, 0.0) + 1.0).abs() < 1e-15);
    let b = nb_logpmf_oracle(3, 2.0, 0.5);
    assert!((nb_logpmf(3, 2.0, 0.5) - b).abs() <= 1e-12 * b.abs().max(1.0));
    assert_eq!(nb_logpmf(0, 0.0, 0.3), 0.0);
    assert_eq!(nb_logpmf(2, 0.0, 0.3), f64::NEG_INFINITY);
    assert!(nb_logpmf(2, -1.0, 0.3).is_nan());
}

#[test]
fn matches_brute_force_on_a_small_dataset() {
    let (state, data) = small();
    let fast = log_likelihood(&state, &data).unwrap();
    let slow = brute_force(&state, &data);
    assert!((fast - slow).abs() <= 1e-9 * slow.abs(), "{fast} vs {slow}");
}

#[test]
fn pointwise_matrix_sums_to_the_total() {
    let (state, data) = small();
    let m = loglik_matrix(&state, &data).unwrap();
    assert_eq!(m.len(), 3 * 2);
    let total = log_likelihood(&state, &data).unwrap();
    assert!((m.iter().sum::<f64>() - total).abs() < 1e-12 * total.abs());
}

#[test]
fn sector_cell_sits_at_the_off_state() {
    let (state, data) = small();
    // Subgroup 1 of gene 0 has phi = 5.7, inside the sector [2pi - 1, 2pi].
    let pos = state.positions(&data.group_of_subgroup);
    let gp = state.genes[0];
    assert_eq!((pos[2].s, pos[2].u), (gp.s_off(), gp.u_off));
}

#[test]
fn posterior_is_prior_plus_likelihood() {
    let (state, data) = small();
    let lp = log_posterior(&state, &data).unwrap();
    let parts = log_prior(&state) + log_likelihood(&state, &data).unwrap();
    assert!((lp - parts).abs() < 1e-12 * lp.abs());
}

#[test]
fn prior_support() {
    let (state, data) = small();
    let mut bad = state.clone();
    bad.genes[0].u_on = 31.0;
    assert_eq!(log_prior(&bad), f64::NEG_INFINITY);
    assert_eq!(log_posterior(&bad, &data).unwrap(), f64::NEG_INFINITY);
    let mut bad = state.clone();
    bad.lambda[1] = 1.5;
    assert_eq!(log_prior(&bad), f64::NEG_INFINITY);
    // The angle prior is flat: moving an angle does not change the prior.
    let mut moved = state.clone();
    moved.phi[0] = 4.4;
    assert_eq!(log_prior(&moved), log_prior(&state));
}

#[test]
fn rescaling_to_unit_mean_capture() {
    let (mut state, data) = small();
    state.lambda = vec![0.5; 3];
    let out = rescale_capture(&state);
    assert_eq!(out.lambda, vec![1.0; 3]);
    // Doubling every lambda halves the positions so their product is unchanged.
    assert_eq!(out.genes[0].u_on, 4.5);
    assert_eq!(out.u_sw, vec![3.0, 1.0]);
    let before = log_likelihood(&state, &data).unwrap();
    let after = log_likelihood(&out, &data).unwrap();
    assert!((before - after).abs() < 1e-12 * before.abs());

    let (state, _) = small();
    let out = rescale_capture(&state);
    let mean = out.lambda.iter().sum::<f64>() / 3.0;
    assert!((mean - 1.0).abs() < 1e-12);
}

#[test]
fn shape_mismatch_is_an_error() {
    let (mut state, data) = small();
    state.lambda.pop();
    assert!(log_likelihood(&state, &data).is_err());
}

proptest! {
    #[test]
    fn capture_rescaling_leaves_the_likelihood_unchanged(factor in 0.05..20.0f64, eta in 0.0..3.0f64) {
        let (mut state, data) = small();
        state.genes[0].eta = eta;
        let before = log_likelihood(&state, &data).unwrap();
        let after = log_likelihood(&scale_capture(&state, factor), &data).unwrap();
        prop_assert!((before - after).abs() <= 1e-9 * before.abs());
    }

    #[test]
    fn small_overdispersion_approaches_the_poisson(y in 0u32..60, mu in 0.01..80.0f64) {
        let nb = nb_logpmf(y, mu, 1e-12);
        let poisson = nb_logpmf(y, mu, 0.0);
        prop_assert!((nb - poisson).abs() <= 1e-9 * poisson.abs().max(1.0));
    }

    #[test]
    fn nb_departs_from_the_poisson_at_first_order(y in 0u32..60, mu in 0.01..80.0f64, eta in 1e-10..1e-6f64) {
        // ln NB - ln Poisson = eta ((y - mu)^2 - y) / 2 + O(eta^2).
        let yf = f64::from(y);
        let diff = nb_logpmf(y, mu, eta) - nb_logpmf(y, mu, 0.0);
        let first = eta * ((yf - mu).powi(2) - yf) / 2.0;
        let second = eta * eta * (mu + yf + 1.0).powi(3);
        prop_assert!((diff - first).abs() <= second + 1e-12, "{} vs {}", diff, first);
    }

    #[test]
    fn nb_matches_the_oracle(y in 0u32..200, mu in 0.01..100.0f64, eta in 1e-4..10.0f64) {
        let b = nb_logpmf_oracle(y, mu, eta);
        prop_assert!((nb_logpmf(y, mu, eta) - b).abs() <= 1e-10 * b.abs().max(1.0));
    }
}
