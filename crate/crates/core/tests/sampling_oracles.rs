mod common;

use lus_core::model::{Dataset, LabeledPoint, ProbVector};
use lus_core::sampling::{
    case_control_plan, draw_subsample, expected_fraction, lus_acceptance, uniform_acceptance,
    AcceptancePlan, AcceptanceVector, PilotProbs, Scheme, Subsample, SubsampleEntry,
};
use lus_core::simulate::{generate, marginal_imbalance_spec};
use lus_core::{fit_subsample_mle, train_pilot, SolverConfig};
use proptest::prelude::*;

use common::{piecewise_acceptance, random_fixture, simplex_point};

#[test]
fn expected_fraction_matches_weighted_acceptance() {
    let mut r = common::rng(21);
    for i in 0..5_000 {
        let p = simplex_point(&mut r, 2 + i % 6);
        for g in [1.0, 1.1, 1.5, 2.0, 3.7, 10.0] {
            let a = lus_acceptance(&p, g).unwrap();
            let direct: f64 = a.as_slice().iter().zip(p.as_slice()).map(|(a, p)| a * p).sum();
            let closed = expected_fraction(&p, g).unwrap();
            assert!((direct - closed).abs() < 1e-12, "{p:?} γ={g}: {direct} vs {closed}");
            assert!(closed <= 1.0 / g + 1e-15);
        }
    }
}

#[test]
fn expected_fraction_is_non_increasing_in_gamma() {
    let mut r = common::rng(22);
    for _ in 0..500 {
        let p = simplex_point(&mut r, 3);
        let mut last = f64::INFINITY;
        for i in 0..=180 {
            let g = 1.0 + 0.05 * i as f64;
            let f = expected_fraction(&p, g).unwrap();
            assert!(f <= last + 1e-15);
            last = f;
        }
    }
}

#[test]
fn unified_rule_matches_two_case_rule_on_random_points() {
    let mut r = common::rng(23);
    for _ in 0..5_000 {
        let p = simplex_point(&mut r, 4);
        let q = p.max().max(0.5);
        if q > 1.0 - 1e-6 {
            continue;
        }
        let top = p.argmax();
        let majority = p.as_slice()[top] >= 0.5;
        for g in [1.0, 1.3, 2.0, 4.5] {
            let a = lus_acceptance(&p, g).unwrap();
            for (k, &ak) in a.as_slice().iter().enumerate() {
                let want = piecewise_acceptance(q, g, majority && k == top);
                assert!((ak - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn lus_reduces_to_local_case_control_for_two_classes() {
    for gamma in [2.0, 2.5, 4.0] {
        for i in 1..1000 {
            let p1 = i as f64 / 1000.0;
            let p = ProbVector::new(vec![p1, 1.0 - p1]).unwrap();
            let a = lus_acceptance(&p, gamma).unwrap();
            // Local case-control accepts with |y − p̃| scaled by 2/γ.
            let lcc = [2.0 * (1.0 - p1) / gamma, 2.0 * p1 / gamma];
            assert!(common::max_abs_diff(a.as_slice(), &lcc) < 1e-12);
        }
    }
}

#[test]
fn bernoulli_draw_rate_within_four_sigma() {
    let n = 100_000;
    let pts: Vec<LabeledPoint> = (0..n)
        .map(|i| LabeledPoint::new(vec![i as f64], 1 + i % 2))
        .collect();
    let data = Dataset::new(pts, 1, 2).unwrap();
    let plan = AcceptancePlan {
        scheme: Scheme::Uniform,
        gamma: 1.0 / 0.3,
        per_point: vec![AcceptanceVector::new(vec![0.3, 0.3]).unwrap(); n],
    };
    let sub = draw_subsample(&data, &plan, 99).unwrap();
    let sigma = (n as f64 * 0.3 * 0.7).sqrt();
    assert!((sub.len() as f64 - 0.3 * n as f64).abs() < 4.0 * sigma);
    assert!(sub.entries.windows(2).all(|w| w[0].index < w[1].index));
    assert_eq!(sub, draw_subsample(&data, &plan, 99).unwrap());
    assert_ne!(sub, draw_subsample(&data, &plan, 100).unwrap());
}

#[test]
fn realised_size_tracks_expected_size() {
    let spec = marginal_imbalance_spec();
    let data = generate(&spec, 50_000, 5).unwrap();
    let pilot = train_pilot(&data, 0.1, 6).unwrap();
    let probs = PilotProbs::from_model(&pilot, &data).unwrap();
    let n = data.len() as f64;
    for g in [1.5, 2.0, 5.0] {
        let plan = AcceptancePlan::lus(&probs, g).unwrap();
        let expected = lus_core::asymptotics::expected_subsample_size(&probs, g).unwrap();
        let sub = draw_subsample(&data, &plan, 7).unwrap();
        assert!((sub.len() as f64 - expected).abs() < 4.0 * n.sqrt(), "γ={g}");
    }
}

#[test]
fn scaling_acceptance_leaves_the_fit_unchanged() {
    let mut r = common::rng(24);
    let cfg = SolverConfig::default();
    for _ in 0..5 {
        let fx = random_fixture(&mut r, false);
        let k = fx.data.classes();
        let build = |c: f64| {
            let entries = (0..fx.data.len())
                .map(|i| {
                    let a: Vec<f64> = (0..k)
                        .map(|j| c * (0.2 + 0.7 * ((i * 7 + j * 3) % 10) as f64 / 10.0))
                        .collect();
                    SubsampleEntry {
                        index: i,
                        point: fx.data.point(i),
                        offsets: AcceptanceVector::new(a).unwrap().offsets().unwrap(),
                    }
                })
                .collect();
            Subsample {
                entries,
                n_original: fx.data.len(),
                gamma: 1.0,
                k,
                d: fx.data.dim(),
            }
        };
        let a = fit_subsample_mle(&build(1.0), &cfg).unwrap();
        let b = fit_subsample_mle(&build(0.37), &cfg).unwrap();
        assert!(common::max_abs_diff(a.params.as_slice(), b.params.as_slice()) < 1e-9);
    }
}

/// Redistribution rule written as "water filling": the per-class quota `t`
/// solves Σ_k min(count_k, t) = budget.
fn water_fill(counts: &[usize], budget: usize) -> Vec<f64> {
    let (mut lo, mut hi) = (0.0f64, budget as f64);
    for _ in 0..200 {
        let t = 0.5 * (lo + hi);
        let used: f64 = counts.iter().map(|&c| (c as f64).min(t)).sum();
        if used < budget as f64 {
            lo = t;
        } else {
            hi = t;
        }
    }
    counts
        .iter()
        .map(|&c| if c == 0 { 1.0 } else { (hi / c as f64).min(1.0) })
        .collect()
}

fn data_with_counts(counts: &[usize]) -> Dataset {
    let mut pts = Vec::new();
    for (k, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            pts.push(LabeledPoint::new(vec![0.0], k + 1));
        }
    }
    Dataset::new(pts, 1, counts.len()).unwrap()
}

proptest! {
    #[test]
    fn case_control_matches_water_filling(
        counts in prop::collection::vec(1usize..400, 2..6),
        frac in 0.01f64..1.0,
    ) {
        let n: usize = counts.iter().sum();
        let budget = ((frac * n as f64).round() as usize).clamp(1, n);
        let data = data_with_counts(&counts);
        let a = case_control_plan(&data, budget).unwrap();
        let want = water_fill(&counts, budget);
        prop_assert!(common::max_abs_diff(&a, &want) < 1e-9, "{a:?} vs {want:?}");
        let size: f64 = a.iter().zip(&counts).map(|(a, &c)| a * c as f64).sum();
        prop_assert!((size - budget as f64).abs() < 1e-6);
    }

    #[test]
    fn acceptance_entries_are_valid_probabilities(
        raw in prop::collection::vec(0.0f64..1.0, 2..8),
        gamma in 1.0f64..20.0,
    ) {
        let s: f64 = raw.iter().sum::<f64>() + 1e-9;
        let p: Vec<f64> = raw.iter().map(|v| (v + 1e-9 / raw.len() as f64) / s).collect();
        let s2: f64 = p.iter().sum();
        let p = ProbVector::new(p.iter().map(|v| v / s2).collect()).unwrap();
        let a = lus_acceptance(&p, gamma).unwrap();
        prop_assert!(a.as_slice().iter().all(|&v| (1e-12..=1.0).contains(&v)));
        prop_assert!(a.q_tilde() >= 0.5 && a.q_tilde() <= 1.0 - 1e-6);
        prop_assert!(a.offsets().unwrap().as_slice().iter().all(|o| o.is_finite()));
    }

    #[test]
    fn uniform_acceptance_is_flat(k in 2usize..10, gamma in 1.0f64..50.0) {
        let a = uniform_acceptance(k, gamma).unwrap();
        prop_assert!(a.as_slice().iter().all(|&v| v == 1.0 / gamma));
        prop_assert!(a.offsets().unwrap().as_slice().iter().all(|&o| o == 0.0));
    }
}
