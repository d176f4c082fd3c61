mod common;

use common::rng;
use eigendist_core::concentration::{
    bernstein_tail, contraction_check, exact_log_mgf, exp_moment_bound, function_tail_bound,
    iterated_contraction_excess, jump_bound, lipschitz_norm, sigma_moments, simulate_distance_tail,
    simulate_function_tail, ConcentrationParams, TAIL_GRID,
};
use eigendist_core::families::{
    gamblers_ruin, hamming, harmonic_h, kappa_l, lazy_torus, rho_l, spin_flip,
};
use eigendist_core::{
    certify, coupling_for, sandwich_from_eigenfunction, symmetrize, MarkovChain, PseudoMetric,
    Tolerances,
};
use proptest::prelude::*;
use rand::Rng;

fn fleet() -> Vec<(MarkovChain, PseudoMetric, f64)> {
    let tol = Tolerances::default();
    let mut out = Vec::new();
    for (l, q) in [(7, 0.2), (13, 0.25)] {
        let chain = lazy_torus(l, q).unwrap();
        let eig = certify(&chain, &rho_l(l).unwrap(), 1.0, &tol).unwrap();
        out.push((chain, eig.rho, eig.kappa));
    }
    for (n, q) in [(3, 0.1), (4, 0.3)] {
        let chain = spin_flip(n, q).unwrap();
        let eig = certify(&chain, &hamming(n).unwrap(), 1.0, &tol).unwrap();
        out.push((chain, eig.rho, eig.kappa));
    }
    let ruin = gamblers_ruin(6, 0.3).unwrap();
    let h = harmonic_h(&ruin, &[0], &[6]).unwrap();
    let s = sandwich_from_eigenfunction(&ruin, &h, 1.0, 1.0, &tol).unwrap();
    out.push((ruin, s.result.rho, s.result.kappa.max(0.0)));
    out
}

#[test]
fn sigma_below_jump_powers() {
    for (chain, rho, _) in fleet() {
        let sigma = sigma_moments(&chain, &rho, 20);
        let two_j = 2.0 * jump_bound(&chain, &rho);
        for (m, &s) in sigma.iter().enumerate().skip(1) {
            assert!(
                s <= two_j.powi(m as i32) * (1.0 + 1e-12) + 1e-300,
                "m = {m}"
            );
        }
    }
}

#[test]
fn random_functions_contract_on_the_torus() {
    let chain = lazy_torus(7, 0.2).unwrap();
    let rho = rho_l(7).unwrap();
    let kappa = kappa_l(7, 0.6).unwrap();
    let mut r = rng(11);
    for _ in 0..100 {
        let f: Vec<f64> = (0..7).map(|_| r.gen_range(-1.0..1.0)).collect();
        assert!(contraction_check(&chain, &rho, kappa, &f) <= 1e-10);
        assert!(iterated_contraction_excess(&chain, &rho, kappa, &f, 20) <= 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contraction_on_fleet(seed in any::<u64>(), which in 0usize..5) {
        let (chain, rho, kappa) = fleet().swap_remove(which);
        let mut r = rng(seed);
        let f: Vec<f64> = (0..chain.n()).map(|_| r.gen_range(-5.0..5.0)).collect();
        prop_assert!(contraction_check(&chain, &rho, kappa, &f) <= 1e-10);
        prop_assert!(iterated_contraction_excess(&chain, &rho, kappa, &f, 20) <= 1e-10);
    }

    #[test]
    fn moment_bound_dominates_exact_mgf(seed in any::<u64>(), which in 0usize..5, t in 1usize..30) {
        let (chain, rho, kappa) = fleet().swap_remove(which);
        let mut r = rng(seed);
        let raw: Vec<f64> = (0..chain.n()).map(|_| r.gen_range(-1.0..1.0)).collect();
        // Rescale to Lipschitz norm at most 1 so the series stays in range.
        let lip = lipschitz_norm(&raw, &rho);
        let f: Vec<f64> = raw.iter().map(|v| v / lip.max(1e-12)).collect();
        let params = ConcentrationParams::new(&chain, &rho, kappa, 20, Some(&f)).unwrap();
        let bound = exp_moment_bound(&params, params.lip_norm.unwrap(), t).unwrap();
        let x0 = (seed % chain.n() as u64) as usize;
        let exact = exact_log_mgf(&chain, &f, x0, t, 1.0);
        prop_assert!(exact <= bound + 1e-12, "{} > {}", exact, bound);
    }

    #[test]
    fn function_tail_is_monotone(kappa in 0.0f64..1.0, t in 1usize..200, r in 0.0f64..5.0, dr in 0.0f64..1.0) {
        prop_assert!(function_tail_bound(kappa, t, r + dr) <= function_tail_bound(kappa, t, r));
        prop_assert!(bernstein_tail(1.0, r + dr) <= bernstein_tail(1.0, r));
    }
}

#[test]
fn spin_function_tails_are_dominated() {
    let chain = spin_flip(4, 0.1).unwrap();
    let rho = hamming(4).unwrap();
    let f: Vec<f64> = (0..16).map(|y| rho.get(0, y)).collect();
    for t in [1, 10] {
        let rep = simulate_function_tail(&chain, &f, &rho, 0.2, 0, t, 20_000, 7).unwrap();
        assert_eq!(rep.r, TAIL_GRID.to_vec());
        assert!(rep.dominated(4.0), "T = {t}: {rep:?}");
    }
}

#[test]
fn ruin_function_tail_is_dominated() {
    let chain = gamblers_ruin(10, 0.25).unwrap();
    let h = harmonic_h(&chain, &[0], &[10]).unwrap();
    let tol = Tolerances::default();
    let s = sandwich_from_eigenfunction(&chain, &h, 1.0, 1.0, &tol).unwrap();
    let rep = simulate_function_tail(&chain, &h, &s.fixed_point, 0.0, 5, 25, 20_000, 3).unwrap();
    assert!(rep.dominated(4.0), "{rep:?}");
}

#[test]
fn torus_distance_tail_is_dominated() {
    let chain = lazy_torus(7, 0.2).unwrap();
    let tol = Tolerances::default();
    let eig = certify(&chain, &rho_l(7).unwrap(), 1.0, &tol).unwrap();
    let c = symmetrize(&coupling_for(&chain, &eig, &tol).unwrap());
    let rep = simulate_distance_tail(&chain, &c, 0, 3, 15, 20_000, 9).unwrap();
    assert!(rep.dominated(4.0), "{rep:?}");
    assert!(rep.bound.iter().all(|&b| b <= 1.0));
}

#[test]
fn tail_report_json_shape() {
    let chain = spin_flip(2, 0.2).unwrap();
    let rho = hamming(2).unwrap();
    let f: Vec<f64> = (0..4).map(|y| rho.get(0, y)).collect();
    let rep = simulate_function_tail(&chain, &f, &rho, 0.4, 0, 3, 500, 1).unwrap();
    let v: serde_json::Value = serde_json::to_value(&rep).unwrap();
    for key in ["r", "empirical", "bound", "mc_stderr"] {
        assert_eq!(v[key].as_array().unwrap().len(), TAIL_GRID.len());
    }
    let again = simulate_function_tail(&chain, &f, &rho, 0.4, 0, 3, 500, 1).unwrap();
    assert_eq!(rep, again);
}
