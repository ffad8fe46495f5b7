mod common;

use common::*;
use crossfit::basis::{Basis, BasisSpec};
use crossfit::estimators::{hoif_ecc, hoif_ecc_terms};
use crossfit::functionals::FnNuisance;
use crossfit::rng::rng_from_seed;
use rand::Rng;

fn check(n_est: usize, n_train: usize, cells: usize, kappa: usize, seed: u64) {
    let mut rng = rng_from_seed(seed);
    let data = random_dataset(&mut rng, n_est + n_train, 1);
    let basis = Basis::new(BasisSpec::new(1, kappa, cells)).unwrap();
    let training: Vec<usize> = (n_est..n_est + n_train).collect();
    let est: Vec<usize> = (0..n_est).collect();
    let sigma = oracle_gram(&design(&basis, &data, &training), None);
    let p = design(&basis, &data, &est);
    let u: Vec<f64> = est.iter().map(|&i| data.a(i)[0]).collect();
    let w: Vec<f64> = est.iter().map(|&i| data.y(i)).collect();
    for q in [0, 1] {
        let fast = hoif_ecc(&data, &basis, &training, q, None, None).unwrap().beta_scalar();
        let brute = brute_hoif(&u, &w, &p, &sigma, q);
        assert!((fast - brute).abs() <= 1e-10, "n={n_est} K={} Q={q}: {fast} vs {brute}", basis.k());
    }
}

#[test]
fn fast_path_matches_triple_loop() {
    let mut rng = rng_from_seed(51);
    for trial in 0..20 {
        let n = rng.gen_range(3..=60);
        let (kappa, cells) = [(0, 6), (1, 5), (2, 4), (0, 4), (3, 3)][trial % 5];
        check(n, 400, cells, kappa, 1000 + trial as u64);
    }
}

#[test]
fn initial_estimates_enter_through_residuals() {
    let mut rng = rng_from_seed(52);
    let data = random_dataset(&mut rng, 300, 1);
    let basis = Basis::new(BasisSpec::new(1, 1, 3)).unwrap();
    let training: Vec<usize> = (40..300).collect();
    let g = FnNuisance(|x: &[f64]| (3.0 * x[0]).sin());
    let a = FnNuisance(|x: &[f64]| x[0]);
    let fast = hoif_ecc(&data, &basis, &training, 1, Some(&g), Some(&a)).unwrap().beta_scalar();
    let est: Vec<usize> = (0..40).collect();
    let sigma = oracle_gram(&design(&basis, &data, &training), None);
    let p = design(&basis, &data, &est);
    let u: Vec<f64> = est.iter().map(|&i| data.a(i)[0] - data.x(i)[0]).collect();
    let w: Vec<f64> = est.iter().map(|&i| data.y(i) - (3.0 * data.x(i)[0]).sin()).collect();
    assert!((fast - brute_hoif(&u, &w, &p, &sigma, 1)).abs() <= 1e-10);
}

#[test]
fn third_term_vanishes_below_three_points() {
    let mut rng = rng_from_seed(53);
    let data = random_dataset(&mut rng, 50, 1);
    let basis = Basis::new(BasisSpec::haar(1, 2)).unwrap();
    let training: Vec<usize> = (2..50).collect();
    let t = hoif_ecc_terms(&data, &basis, &training, 1, None, None).unwrap();
    assert_eq!(t.third, 0.0);
    assert_eq!(basis.k(), 2);
}
