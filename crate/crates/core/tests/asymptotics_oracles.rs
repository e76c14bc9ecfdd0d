mod common;

use lus_core::asymptotics::{
    closed_form_variance, dominance_margin, information_matrix, point_s_matrix,
};
use lus_core::model::{Dataset, ProbVector};
use lus_core::sampling::{AcceptancePlan, AcceptanceVector};
use lus_core::simulate::{generate, marginal_imbalance_spec, true_params};
use rand::seq::SliceRandom;
use rand::Rng;

use common::simplex_point;

/// Block formulas for the weighted kernel, one entry at a time.
fn block_formula(p: &[f64], a: &[f64]) -> Vec<f64> {
    let k = p.len();
    let total: f64 = (0..k).map(|j| a[j] * p[j]).sum();
    let m = k - 1;
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            out[i * m + j] = if i == j {
                let rest: f64 = (0..k).filter(|&l| l != j).map(|l| a[l] * p[l]).sum();
                a[j] * p[j] * rest / total
            } else {
                -a[i] * p[i] * a[j] * p[j] / total
            };
        }
    }
    out
}

fn row_major(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

#[test]
fn kernel_matches_block_formulas() {
    let mut r = common::rng(31);
    for i in 0..2_000 {
        let k = 2 + i % 6;
        let p = simplex_point(&mut r, k);
        let a: Vec<f64> = (0..k).map(|_| r.random_range(1e-3..1.0)).collect();
        let av = AcceptanceVector::new(a.clone()).unwrap();
        let s = point_s_matrix(&p, Some(&av)).unwrap().s;
        let want = block_formula(p.as_slice(), &a);
        assert!(common::max_abs_diff(&row_major(&s), &want) < 1e-14);
        let full = point_s_matrix(&p, None).unwrap().s;
        let want_full = block_formula(p.as_slice(), &vec![1.0; k]);
        assert!(common::max_abs_diff(&row_major(&full), &want_full) < 1e-14);
    }
}

#[test]
fn constant_acceptance_scales_the_kernel() {
    let mut r = common::rng(32);
    for _ in 0..500 {
        let p = simplex_point(&mut r, 4);
        let c = r.random_range(0.01..1.0);
        let s = point_s_matrix(&p, Some(&AcceptanceVector::new(vec![c; 4]).unwrap())).unwrap().s;
        let full = point_s_matrix(&p, None).unwrap().s * c;
        assert!(common::max_abs_diff(s.as_slice(), full.as_slice()) < 1e-15);
    }
}

#[test]
fn kernel_is_equivariant_under_non_reference_permutations() {
    let mut r = common::rng(33);
    for _ in 0..500 {
        let k = 5;
        let p = simplex_point(&mut r, k);
        let a: Vec<f64> = (0..k).map(|_| r.random_range(0.05..1.0)).collect();
        let mut perm: Vec<usize> = (0..k - 1).collect();
        perm.shuffle(&mut r);
        let mut pp: Vec<f64> = perm.iter().map(|&i| p.as_slice()[i]).collect();
        pp.push(p.as_slice()[k - 1]);
        let mut ap: Vec<f64> = perm.iter().map(|&i| a[i]).collect();
        ap.push(a[k - 1]);
        let s = point_s_matrix(&p, Some(&AcceptanceVector::new(a).unwrap())).unwrap().s;
        let sp = point_s_matrix(
            &ProbVector::new(pp).unwrap(),
            Some(&AcceptanceVector::new(ap).unwrap()),
        )
        .unwrap()
        .s;
        for i in 0..k - 1 {
            for j in 0..k - 1 {
                assert!((sp[(i, j)] - s[(perm[i], perm[j])]).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn dominance_holds_for_larger_class_counts() {
    let mut r = common::rng(34);
    for i in 0..2_000 {
        let p = simplex_point(&mut r, 6 + i % 5);
        for g in [1.0, 1.01, 1.3, 1.99, 2.0, 2.01, 7.0, 100.0] {
            assert!(dominance_margin(&p, g).unwrap() >= -1e-10);
        }
    }
    // Near-vertex points exercise the probability clamp.
    for eps in [1e-3, 1e-7, 1e-10] {
        let p = ProbVector::new(vec![1.0 - 2.0 * eps, eps, eps]).unwrap();
        for g in [1.0, 1.5, 3.0] {
            assert!(dominance_margin(&p, g).unwrap() >= -1e-10);
        }
    }
}

fn population() -> (Dataset, lus_core::ModelParams) {
    let spec = marginal_imbalance_spec();
    (generate(&spec, 4_000, 3).unwrap(), true_params(&spec).unwrap())
}

fn rel_max(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    let scale = b.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    common::max_abs_diff(a.as_slice(), b.as_slice()) / scale
}

#[test]
fn variance_is_invariant_to_row_order() {
    let (data, theta) = population();
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut common::rng(35));
    let shuffled = data.select(&idx);
    let a = closed_form_variance(&data, &theta, None).unwrap().matrix;
    let b = closed_form_variance(&shuffled, &theta, None).unwrap().matrix;
    assert!(rel_max(&a, &b) < 1e-10);
}

#[test]
fn uniform_acceptance_inflates_variance_by_gamma() {
    let (data, theta) = population();
    let base = closed_form_variance(&data, &theta, None).unwrap().matrix;
    for g in [1.0, 2.0, 3.5] {
        let plan = AcceptancePlan::uniform(data.len(), data.classes(), g).unwrap();
        let v = closed_form_variance(&data, &theta, Some(&plan)).unwrap().matrix;
        assert!(rel_max(&v, &(&base * g)) < 1e-10, "γ={g}");
    }
}

#[test]
fn lus_variance_is_dominated_by_uniform_at_matched_gamma() {
    let (data, theta) = population();
    let probs = lus_core::PilotProbs::from_model(&theta, &data).unwrap();
    for g in [1.5, 2.0, 4.0] {
        let plan = AcceptancePlan::lus(&probs, g).unwrap();
        let uni = AcceptancePlan::uniform(data.len(), data.classes(), g).unwrap();
        // Information ordering: I_LUS · γ ⪰ I_full, i.e. γ I_LUS − I_full is PSD.
        let diff = information_matrix(&data, &theta, Some(&plan)).unwrap() * g
            - information_matrix(&data, &theta, Some(&uni)).unwrap() * g;
        let min = nalgebra::SymmetricEigen::new(diff).eigenvalues.min();
        assert!(min >= -1e-10, "γ={g}: {min}");
    }
}
