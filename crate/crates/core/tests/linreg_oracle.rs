mod common;

use common::*;
use crossfit::basis::{Basis, BasisSpec, Reparametrized};
use crossfit::linreg::{fit_regression, gram, pinv_psd, DEFAULT_REL_TOL};
use crossfit::rng::rng_from_seed;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn random_small_basis<R: Rng>(rng: &mut R) -> Basis {
    loop {
        let r = rng.gen_range(1..=2);
        let kappa = rng.gen_range(0..=3);
        let cells = rng.gen_range(1..=4);
        let spec = BasisSpec::new(r, kappa, cells);
        if spec.total_size() <= 8 {
            return Basis::new(spec).unwrap();
        }
    }
}

#[test]
fn regression_matches_normal_equation_oracle() {
    let mut rng = rng_from_seed(11);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let basis = random_small_basis(&mut rng);
        // at least two observations per coefficient
        let n = rng.gen_range(2 * basis.k()..=50);
        let xs = uniform_points(&mut rng, n, basis.r());
        let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let fit = fit_regression(&basis, &refs, &ys).unwrap();
        let rows: Mat = xs.iter().map(|x| basis.eval(x).unwrap()).collect();
        let oracle = oracle_regression(&rows, &ys);
        worst = worst.max(max_abs_diff(&fit.coeffs, &oracle));
    }
    assert!(worst <= 1e-10, "max coefficient error {worst:e}");
}

#[test]
fn haar_fits_are_cell_means() {
    let basis = Basis::new(BasisSpec::haar(1, 5)).unwrap();
    let mut rng = rng_from_seed(3);
    // no draws in the last cell [0.8, 1]
    let xs: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.gen_range(0.0..0.8)]).collect();
    let ys: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
    let fit = fit_regression(&basis, &refs, &ys).unwrap();
    for cell in 0..5 {
        let members: Vec<f64> = xs
            .iter()
            .zip(&ys)
            .filter(|(x, _)| ((x[0] * 5.0) as usize).min(4) == cell)
            .map(|(_, y)| *y)
            .collect();
        let mid = [(cell as f64 + 0.5) / 5.0];
        let pred = fit.predict(&basis, &mid).unwrap();
        if members.is_empty() {
            assert_eq!(pred, 0.0);
        } else {
            let mean = members.iter().sum::<f64>() / members.len() as f64;
            assert!((pred - mean).abs() <= 1e-12);
        }
    }
    assert_eq!(fit.gram.empty_columns, vec![4]);
    assert!(!fit.gram.nonsingular_flag);
}

#[test]
fn training_residuals_are_orthogonal_to_the_basis() {
    let mut rng = rng_from_seed(5);
    for _ in 0..50 {
        let basis = Basis::new(BasisSpec::new(1, rng.gen_range(0..=3), rng.gen_range(1..=6))).unwrap();
        let n = 200;
        let xs = uniform_points(&mut rng, n, 1);
        let ys: Vec<f64> = xs.iter().map(|x| (5.0 * x[0]).cos() + rng.gen_range(-0.5..0.5)).collect();
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let fit = fit_regression(&basis, &refs, &ys).unwrap();
        if !fit.gram.nonsingular_flag {
            continue;
        }
        let mut score = vec![0.0; basis.k()];
        for (x, y) in xs.iter().zip(&ys) {
            let p = basis.eval(x).unwrap();
            let resid = y - dot(&p, &fit.coeffs);
            for k in 0..basis.k() {
                score[k] += p[k] * resid;
            }
        }
        assert!(score.iter().all(|s| s.abs() <= 1e-9 * n as f64));
    }
}

#[test]
fn coefficients_lie_in_the_gram_row_space() {
    let basis = Basis::new(BasisSpec::haar(2, 3)).unwrap();
    let mut rng = rng_from_seed(8);
    let xs = uniform_points(&mut rng, 12, 2);
    let ys: Vec<f64> = (0..12).map(|_| rng.gen::<f64>()).collect();
    let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
    let fit = fit_regression(&basis, &refs, &ys).unwrap();
    let s = &fit.gram.matrix;
    let d = nalgebra::DVector::from_column_slice(&fit.coeffs);
    let proj = s * fit.gram.pinv() * &d;
    assert!((&d - proj).norm() <= 1e-8 * d.norm().max(1.0));
}

#[test]
fn fitted_values_invariant_under_reparametrization() {
    let mut rng = rng_from_seed(21);
    for _ in 0..20 {
        let base = Basis::new(BasisSpec::new(1, 1, 4)).unwrap();
        let m = random_invertible(&mut rng, base.k());
        let re = Reparametrized::new(base.clone(), m).unwrap();
        let xs = uniform_points(&mut rng, 100, 1);
        let ys: Vec<f64> = xs.iter().map(|x| x[0] * x[0] + rng.gen_range(-0.1..0.1)).collect();
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let a = fit_regression(&base, &refs, &ys).unwrap();
        let b = fit_regression(&re, &refs, &ys).unwrap();
        assert!(a.gram.nonsingular_flag);
        for x in &xs {
            let pa = a.predict(&base, x).unwrap();
            let pb = b.predict(&re, x).unwrap();
            assert!((pa - pb).abs() <= 1e-8);
        }
    }
}

#[test]
fn gram_example_with_empty_cell() {
    let basis = Basis::new(BasisSpec::haar(1, 2)).unwrap();
    let g = gram(&basis, &[&[0.25], &[0.3]]).unwrap();
    assert_eq!(g.matrix[(0, 0)], 1.0);
    assert_eq!(g.matrix[(1, 1)], 0.0);
    assert!(!g.nonsingular_flag);
    assert_eq!(g.rank, 1);
}

fn psd_strategy() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..=30, 1usize..=30, any::<u64>()).prop_map(|(k, rank, seed)| {
        let mut rng = rng_from_seed(seed);
        let rank = rank.min(k);
        let b = DMatrix::from_fn(k, rank, |_, _| rng.gen_range(-1.0..1.0));
        &b * b.transpose()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pseudo_inverse_laws(a in psd_strategy()) {
        let p = pinv_psd(&a, DEFAULT_REL_TOL).unwrap();
        let scale = a.amax().max(1.0);
        prop_assert!((&a * &p * &a - &a).amax() <= 1e-9 * scale);
        prop_assert!((&p * &a * &p - &p).amax() <= 1e-9 * p.amax().max(1.0));
    }

    #[test]
    fn partition_of_unity_and_local_support(
        r in 1usize..=3,
        kappa in 0usize..=4,
        cells in 1usize..=6,
        seed in any::<u64>(),
    ) {
        let basis = Basis::new(BasisSpec::new(r, kappa, cells)).unwrap();
        let mut rng = rng_from_seed(seed);
        for _ in 0..50 {
            let x: Vec<f64> = (0..r).map(|_| rng.gen::<f64>()).collect();
            let row = basis.eval_sparse(&x).unwrap();
            prop_assert!(row.idx.len() <= (kappa + 1).pow(r as u32));
            let total: f64 = row.val.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }
    }
}
