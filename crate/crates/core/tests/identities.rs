mod common;

use common::*;
use crossfit::basis::{Basis, BasisSpec};
use crossfit::data::Dataset;
use crossfit::estimators::{dr_estimate, fit_alpha, fit_gamma, pl_projection, EstimatorOptions};
use crossfit::functionals::{FunctionalSpec, SeriesFunction, Weight, WeightProfile, Zero};
use crossfit::rng::rng_from_seed;
use crossfit::splitting::{make_dcdr_plan, make_single_cf_dr_plan};
use rand::Rng;

#[test]
fn dcdr_equals_two_residual_form() {
    let mut rng = rng_from_seed(31);
    for trial in 0..25 {
        let n = rng.gen_range(60..200);
        let data = random_dataset(&mut rng, n, 1);
        let basis = Basis::new(BasisSpec::new(1, trial % 3, 3)).unwrap();
        let plan = make_dcdr_plan(n, 3 + trial % 3, trial as u64).unwrap();
        let est = dr_estimate(&FunctionalSpec::Ecc, &basis, &data, &plan).unwrap();

        let mut total = 0.0;
        for g in &plan.groups {
            let rows_g = design(&basis, &data, &g.gamma_idx);
            let ys: Vec<f64> = g.gamma_idx.iter().map(|&i| data.y(i)).collect();
            let delta = oracle_regression(&rows_g, &ys);
            let rows_a = design(&basis, &data, g.alpha_train());
            let as_: Vec<f64> = g.alpha_train().iter().map(|&i| data.a(i)[0]).collect();
            let mean_a = oracle_regression(&rows_a, &as_);
            for &i in &g.eval_idx {
                let p = basis.eval(data.x(i)).unwrap();
                total += (data.a(i)[0] - dot(&p, &mean_a)) * (data.y(i) - dot(&p, &delta));
            }
        }
        let expect = total / n as f64;
        assert!((est.beta_scalar() - expect).abs() <= 1e-10, "{} vs {expect}", est.beta_scalar());
    }
}

#[test]
fn ecc_riesz_fit_is_negated_regression_of_a() {
    let mut rng = rng_from_seed(32);
    let opts = EstimatorOptions::default();
    for trial in 0..25 {
        let n = rng.gen_range(20..120);
        let data = random_dataset(&mut rng, n, 2);
        let basis = Basis::new(BasisSpec::new(2, trial % 2, 2)).unwrap();
        let idx: Vec<usize> = (0..n).collect();
        let alpha = fit_alpha(&FunctionalSpec::Ecc, &basis, &data, &idx, &opts).unwrap();
        let as_data = Dataset::new(
            (0..n).map(|i| data.a(i)[0]).collect(),
            (0..n).map(|i| data.a(i)[0]).collect(),
            1,
            (0..n).flat_map(|i| data.x(i).to_vec()).collect(),
            2,
        )
        .unwrap();
        let reg = fit_gamma(&FunctionalSpec::Ecc, &basis, &as_data, &idx, &opts).unwrap();
        for (a, b) in alpha.coeffs.iter().zip(&reg.coeffs) {
            assert!((a + b).abs() <= 1e-12);
        }
    }
}

#[test]
fn basis_action_is_difference_of_m() {
    let mut rng = rng_from_seed(33);
    let functionals = [
        FunctionalSpec::Ecc,
        FunctionalSpec::MissingDataMean,
        FunctionalSpec::weighted_avg_derivative(Weight::density(WeightProfile::RaisedCosine)),
        FunctionalSpec::weighted_avg_derivative(Weight::by_parts(WeightProfile::PolynomialBump).unwrap()),
    ];
    for trial in 0..20 {
        let r = 1 + trial % 2;
        let basis = Basis::new(BasisSpec::new(r, trial % 3, 2)).unwrap();
        let k = basis.k();
        for f in &functionals {
            let x: Vec<f64> = (0..r).map(|_| rng.gen::<f64>()).collect();
            let a = if *f == FunctionalSpec::MissingDataMean {
                f64::from(rng.gen_bool(0.5))
            } else {
                rng.gen_range(-2.0..2.0)
            };
            let av = [a];
            let z = crossfit::data::Observation::new(rng.gen_range(-2.0..2.0), &av, &x);
            let v = f.v_eval(&z, &basis).unwrap();
            let m0 = f.m_eval(&z, &Zero).unwrap();
            for col in 0..k {
                let mut e = vec![0.0; k];
                e[col] = 1.0;
                let pk = SeriesFunction::new(&basis, &e);
                let diff = f.m_eval(&z, &pk).unwrap() - m0;
                assert!((v[col] - diff).abs() <= 1e-10, "{f:?} column {col}");
            }
        }
    }
}

#[test]
fn projection_with_shared_training_sets_is_ratio_of_dr_estimates() {
    let mut rng = rng_from_seed(34);
    for trial in 0..15 {
        let n = rng.gen_range(60..200);
        let data = random_dataset(&mut rng, n, 1);
        let basis = Basis::new(BasisSpec::new(1, 1, 3)).unwrap();
        let plan = make_single_cf_dr_plan(n, 2 + trial % 3, trial as u64).unwrap();
        let pl = pl_projection(&basis, &data, &plan).unwrap();
        let num = dr_estimate(&FunctionalSpec::Ecc, &basis, &data, &plan).unwrap().beta_scalar();
        // the denominator is the same estimator with y replaced by a
        let a_as_y = Dataset::new(
            (0..n).map(|i| data.a(i)[0]).collect(),
            (0..n).map(|i| data.a(i)[0]).collect(),
            1,
            (0..n).flat_map(|i| data.x(i).to_vec()).collect(),
            1,
        )
        .unwrap();
        let den = dr_estimate(&FunctionalSpec::Ecc, &basis, &a_as_y, &plan).unwrap().beta_scalar();
        assert!((pl.beta_scalar() - num / den).abs() <= 1e-12 * (num / den).abs().max(1.0));
    }
}

#[test]
fn projection_recovers_exact_slope() {
    // a independent of x, y = 2.5 a exactly
    let mut rng = rng_from_seed(35);
    let n = 90;
    let rows: Vec<(f64, f64, Vec<f64>)> = (0..n)
        .map(|_| {
            let a: f64 = rng.gen_range(-1.0..1.0);
            (2.5 * a, a, vec![rng.gen::<f64>()])
        })
        .collect();
    let data = Dataset::from_scalar(&rows).unwrap();
    let basis = Basis::new(BasisSpec::haar(1, 1)).unwrap();
    let plan = make_dcdr_plan(n, 3, 4).unwrap();
    let pl = pl_projection(&basis, &data, &plan).unwrap();
    assert!((pl.beta_scalar() - 2.5).abs() <= 1e-12);
}
