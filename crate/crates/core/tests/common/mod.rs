//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use lus_core::model::{Dataset, ModelParams, Offsets, OffsetVector, ProbVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub struct Fixture {
    pub data: Dataset,
    pub offsets: Option<Offsets>,
    pub params: ModelParams,
}

/// A small random problem: every class present, labels independent of the
/// features so the MLE exists with high probability.
pub fn random_fixture(r: &mut ChaCha8Rng, with_offsets: bool) -> Fixture {
    let k = r.random_range(2..=5);
    let d = r.random_range(1..=5);
    let n = r.random_range(8 * k * (d + 1)..=12 * k * (d + 1));
    let scale: f64 = r.random_range(0.5..2.0);
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        for _ in 0..d {
            let z: f64 = StandardNormal.sample(r);
            features.push(scale * z);
        }
        labels.push(if i < k { i + 1 } else { r.random_range(1..=k) });
    }
    let data = Dataset::from_flat(features, labels, d, k).unwrap();
    let offsets = with_offsets.then(|| {
        let rows: Vec<OffsetVector> = (0..n)
            .map(|_| {
                OffsetVector::new((0..k - 1).map(|_| r.random_range(-3.0..3.0)).collect()).unwrap()
            })
            .collect();
        Offsets::from_vectors(&rows, k).unwrap()
    });
    let coef = (0..(k - 1) * (d + 1))
        .map(|_| {
            let z: f64 = StandardNormal.sample(r);
            0.7 * z
        })
        .collect();
    Fixture {
        data,
        offsets,
        params: ModelParams::from_flat(k, d, coef).unwrap(),
    }
}

/// Uniform draw on the probability simplex (normalised exponentials).
pub fn simplex_point(r: &mut ChaCha8Rng, k: usize) -> ProbVector {
    let e: Vec<f64> = (0..k).map(|_| Exp1.sample(r)).collect();
    let s: f64 = e.iter().sum();
    let mut p: Vec<f64> = e.iter().map(|v| v / s).collect();
    // Renormalise once more so the sum is 1 to rounding.
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    ProbVector::new(p).unwrap()
}

/// Two-case acceptance from the theorem statement, written out separately
/// from the library's unified formula. `q` is the largest probability
/// (at least 0.5) and `top` whether the class is the arg-max.
pub fn piecewise_acceptance(q: f64, gamma: f64, top: bool) -> f64 {
    if gamma >= 2.0 * q {
        if top {
            2.0 * (1.0 - q) / gamma
        } else {
            2.0 * q / gamma
        }
    } else if top {
        (1.0 - q) / (gamma - q)
    } else {
        1.0
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `‖a − b‖∞ / max(1, ‖b‖∞)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    max_abs_diff(a, b) / scale
}

pub fn with_coef(p: &ModelParams, coef: Vec<f64>) -> ModelParams {
    ModelParams::from_flat(p.classes(), p.dim(), coef).unwrap()
}

/// Central-difference gradient of `f` at `p`.
pub fn fd_gradient(f: impl Fn(&ModelParams) -> f64, p: &ModelParams, h: f64) -> Vec<f64> {
    let base = p.as_slice().to_vec();
    (0..base.len())
        .map(|j| {
            let mut up = base.clone();
            let mut dn = base.clone();
            up[j] += h;
            dn[j] -= h;
            (f(&with_coef(p, up)) - f(&with_coef(p, dn))) / (2.0 * h)
        })
        .collect()
}

/// Central differences of the gradient, one Hessian column per coordinate,
/// flattened row-major.
pub fn fd_hessian(g: impl Fn(&ModelParams) -> Vec<f64>, p: &ModelParams, h: f64) -> Vec<f64> {
    let base = p.as_slice().to_vec();
    let m = base.len();
    let mut out = vec![0.0; m * m];
    for j in 0..m {
        let mut up = base.clone();
        let mut dn = base.clone();
        up[j] += h;
        dn[j] -= h;
        let gu = g(&with_coef(p, up));
        let gd = g(&with_coef(p, dn));
        for i in 0..m {
            out[i * m + j] = (gu[i] - gd[i]) / (2.0 * h);
        }
    }
    out
}

/// Brute-force averaged negative log-likelihood, one softmax per point.
pub fn brute_nll(p: &ModelParams, data: &Dataset, offsets: Option<&Offsets>) -> f64 {
    let k = data.classes();
    let mut total = 0.0;
    for i in 0..data.len() {
        let x = data.features(i);
        let mut g = vec![0.0; k];
        for (j, gj) in g.iter_mut().take(k - 1).enumerate() {
            let row = p.row(j);
            *gj = row[0] + row[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            if let Some(o) = offsets {
                *gj += o.row(i)[j];
            }
        }
        let m = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + g.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - g[data.label(i) - 1];
    }
    total / data.len() as f64
}
