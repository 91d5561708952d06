mod common;

use common::{planted, rng};
use fcpd::fixtures::{toy_coupled, toy_decoupled};
use fcpd::model::{anchor_constants, decouple};
use fcpd::polyfun::Term;
use fcpd::{relative_error, sample_points, DMatrix, DecoupledModel, MonomialFunction, Polynomial};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn reference_model_reproduces_the_toy_function() {
    let points = sample_points(2, 500, (-1.5, 1.5), 4).unwrap();
    let report = relative_error(&toy_coupled(), &toy_decoupled(), &points).unwrap();
    for e in report.output_errors {
        assert!(e.unwrap() < 1e-6);
    }
}

#[test]
fn written_model_reloads_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let mut g = rng(1);
    let model = DecoupledModel::new(
        common::random_matrix(&mut g, 2, 3),
        common::random_matrix(&mut g, 2, 3),
        (0..3)
            .map(|_| Polynomial::new((0..4).map(|_| g.random_range(-10.0..10.0)).collect()))
            .collect(),
    )
    .unwrap();
    fcpd::io::write_json(&path, &model).unwrap();
    let back = DecoupledModel::load(&path).unwrap();
    assert_eq!(back, model);
    let p = [0.3, -1.1];
    assert_eq!(back.eval(&p).unwrap(), model.eval(&p).unwrap());
}

#[test]
fn decoupling_exact_branch_samples_recovers_the_function() {
    let p = planted(2, 3, 2, 2, 50);
    let f = function_of(&p.w, &p.v, &p.branches);
    let (model, fits) = decouple(&f, &p.points, &p.w, &p.v, &p.g, 3).unwrap();
    assert!(fits.iter().all(|b| b.rms_residual < 1e-10));
    let fresh = sample_points(2, 200, (-1.0, 1.0), 9).unwrap();
    let report = relative_error(&f, &model, &fresh).unwrap();
    assert!(report.worst().unwrap() < 1e-8, "{report:?}");
}

#[test]
fn anchoring_restores_lost_constants() {
    let model = toy_decoupled();
    let stripped: Vec<Polynomial> = model
        .branches()
        .iter()
        .map(|b| {
            let mut c = b.coeffs.clone();
            c[0] = 0.0;
            Polynomial::new(c)
        })
        .collect();
    let stripped = DecoupledModel::new(model.w().clone(), model.v().clone(), stripped).unwrap();
    let points = sample_points(2, 100, (-1.5, 1.5), 3).unwrap();
    let anchored = anchor_constants(&toy_coupled(), &stripped, &points).unwrap();
    let report = relative_error(&toy_coupled(), &anchored, &points).unwrap();
    assert!(report.worst().unwrap() < 1e-8);
}

#[test]
fn identically_zero_output_has_no_relative_error() {
    let f = MonomialFunction::new(
        1,
        2,
        vec![Term {
            exponents: vec![1],
            coeffs: vec![1.0, 0.0],
        }],
    )
    .unwrap();
    let model = DecoupledModel::new(
        DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        DMatrix::from_element(1, 1, 1.0),
        vec![Polynomial::new(vec![0.0, 1.0])],
    )
    .unwrap();
    let points = sample_points(1, 20, (-1.0, 1.0), 0).unwrap();
    let report = relative_error(&f, &model, &points).unwrap();
    assert_eq!(report.output_errors[0], Some(0.0));
    assert_eq!(report.output_errors[1], None);
    assert_eq!(report.worst(), Some(0.0));
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let points = sample_points(2, 20, (-1.0, 1.0), 0).unwrap();
    let model = DecoupledModel::new(
        DMatrix::from_element(2, 1, 1.0),
        DMatrix::from_element(3, 1, 1.0),
        vec![Polynomial::new(vec![0.0, 1.0])],
    )
    .unwrap();
    assert!(relative_error(&toy_coupled(), &model, &points).is_err());
    assert!(model.eval(&[1.0, 2.0]).is_err());
}

#[test]
fn malformed_model_names_the_field() {
    let text =
        r#"{"W": [[1.0, 2.0]], "V": [[1.0]], "branches": [{"coeffs": [1.0]}, {"coeffs": [2.0]}]}"#;
    let err = DecoupledModel::from_json_str(text).unwrap_err();
    assert!(
        matches!(err, fcpd::Error::Validation { ref field, .. } if field == "V"),
        "{err:?}"
    );
}

/// `W g(Vᵀp)` expanded into monomials, for the `m = 2` planted problems.
fn function_of(w: &DMatrix<f64>, v: &DMatrix<f64>, branches: &[Polynomial]) -> MonomialFunction {
    assert_eq!(v.nrows(), 2);
    let n = w.nrows();
    let mut coeffs = std::collections::BTreeMap::<(u32, u32), Vec<f64>>::new();
    for (i, b) in branches.iter().enumerate() {
        let (a, c) = (v[(0, i)], v[(1, i)]);
        for (d, &bd) in b.coeffs.iter().enumerate() {
            // (a x + c y)^d
            for k in 0..=d {
                let binom = (0..k).fold(1.0, |acc, t| acc * (d - t) as f64 / (t + 1) as f64);
                let x = bd * binom * a.powi(k as i32) * c.powi((d - k) as i32);
                let entry = coeffs
                    .entry((k as u32, (d - k) as u32))
                    .or_insert(vec![0.0; n]);
                for j in 0..n {
                    entry[j] += w[(j, i)] * x;
                }
            }
        }
    }
    let terms = coeffs
        .into_iter()
        .map(|((ex, ey), coeffs)| Term {
            exponents: vec![ex, ey],
            coeffs,
        })
        .collect();
    MonomialFunction::new(2, n, terms).unwrap()
}

proptest! {
    #[test]
    fn polynomial_fit_is_exact_for_matching_degree(
        coeffs in prop::collection::vec(-5.0f64..5.0, 1..5),
        seed in any::<u64>(),
    ) {
        let mut g = rng(seed);
        let axis = common::random_axis(&mut g, 30);
        let p = Polynomial::new(coeffs.clone());
        let z = DMatrix::from_column_slice(30, 1, &axis);
        let gm = DMatrix::from_fn(30, 1, |l, _| p.eval(axis[l]));
        let fit = &fcpd::fit_branches(&z, &gm, 4).unwrap()[0];
        for &x in &axis {
            prop_assert!((fit.coeffs.eval(x) - p.eval(x)).abs() < 1e-7 * (1.0 + p.eval(x).abs()));
        }
    }
}
