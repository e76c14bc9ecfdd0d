//! Information kernels and asymptotic variances of subsample estimators.
//!
//! At a point `x` with class probabilities `p` and acceptance `a`, let
//! `p*_k = a_k p_k`. The per-point kernel is
//! `S = diag(p*_1, …, p*_{K−1}) − p* p*ᵀ / Σ_{k=1}^{K} p*_k`, and the
//! asymptotic variance of `√n (Θ̂ − Θ*)` is the inverse of the average of
//! `∇ S ∇ᵀ`, with `∇` the block-diagonal stack of feature maps `(1, x)`.

use nalgebra::{linalg::Cholesky, DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{LusError, Result};
use crate::model::{self, Dataset, ModelParams, ProbVector};
use crate::par;
use crate::sampling::{self, AcceptancePlan, AcceptanceVector, PilotProbs};

/// The `(K − 1) × (K − 1)` kernel at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSMatrix {
    pub s: DMatrix<f64>,
    /// Index of the evaluation point, when it came from a dataset.
    pub at: Option<usize>,
}

pub fn point_s_matrix(p: &ProbVector, a: Option<&AcceptanceVector>) -> Result<PointSMatrix> {
    Ok(PointSMatrix {
        s: s_kernel(p.as_slice(), a.map(AcceptanceVector::as_slice))?,
        at: None,
    })
}

fn s_kernel(p: &[f64], a: Option<&[f64]>) -> Result<DMatrix<f64>> {
    let k = p.len();
    if let Some(a) = a {
        LusError::check_len("acceptance classes", k, a.len())?;
    }
    let weighted: Vec<f64> = match a {
        Some(a) => p.iter().zip(a).map(|(p, a)| p * a).collect(),
        None => p.to_vec(),
    };
    let total: f64 = weighted.iter().sum();
    let m = k - 1;
    let mut s = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let outer = weighted[i] * weighted[j] / total;
            s[(i, j)] = if i == j { weighted[i] - outer } else { -outer };
        }
    }
    Ok(s)
}

fn min_eigenvalue(m: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m).eigenvalues.min()
}

/// Smallest eigenvalue of `γ S(p, a_LUS(p, γ)) − S_full(p)`; non-negative
/// whenever LUS at `γ` is at least as efficient as uniform sampling at `1/γ`.
pub fn dominance_margin(p: &ProbVector, gamma: f64) -> Result<f64> {
    let a = sampling::lus_acceptance(p, gamma)?;
    let s = s_kernel(p.as_slice(), Some(a.as_slice()))?;
    let full = s_kernel(p.as_slice(), None)?;
    Ok(min_eigenvalue(s * gamma - full))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceKind {
    ClosedForm,
    Empirical,
}

/// A covariance matrix over the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "VarianceRecord", try_from = "VarianceRecord")]
pub struct VarianceEstimate {
    pub matrix: DMatrix<f64>,
    pub kind: VarianceKind,
}

#[derive(Serialize, Deserialize)]
struct VarianceRecord {
    kind: VarianceKind,
    dim: usize,
    matrix: Vec<Vec<f64>>,
}

impl From<VarianceEstimate> for VarianceRecord {
    fn from(v: VarianceEstimate) -> Self {
        VarianceRecord {
            kind: v.kind,
            dim: v.matrix.nrows(),
            matrix: v
                .matrix
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        }
    }
}

impl TryFrom<VarianceRecord> for VarianceEstimate {
    type Error = LusError;

    fn try_from(r: VarianceRecord) -> Result<Self> {
        LusError::check_len("variance rows", r.dim, r.matrix.len())?;
        for row in &r.matrix {
            LusError::check_len("variance columns", r.dim, row.len())?;
        }
        let flat: Vec<f64> = r.matrix.into_iter().flatten().collect();
        Ok(VarianceEstimate {
            matrix: DMatrix::from_row_slice(r.dim, r.dim, &flat),
            kind: r.kind,
        })
    }
}

impl VarianceEstimate {
    pub fn diagonal(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().copied().collect()
    }

    /// Sample covariance (denominator `m − 1`) of `m` parameter draws.
    pub fn empirical(samples: &[Vec<f64>]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(LusError::invalid("need at least two samples for a covariance"));
        }
        let p = samples[0].len();
        let m = samples.len() as f64;
        let mut mean = vec![0.0; p];
        for s in samples {
            LusError::check_len("sample length", p, s.len())?;
            for (a, v) in mean.iter_mut().zip(s) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        let mut cov = DMatrix::zeros(p, p);
        for s in samples {
            for i in 0..p {
                let di = s[i] - mean[i];
                for j in i..p {
                    cov[(i, j)] += di * (s[j] - mean[j]);
                }
            }
        }
        for i in 0..p {
            for j in i..p {
                let v = cov[(i, j)] / (m - 1.0);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        Ok(Self {
            matrix: cov,
            kind: VarianceKind::Empirical,
        })
    }
}

/// Average of `∇ S ∇ᵀ` over `data`, with `p(x, ·)` from the model and
/// acceptance from `acceptance` (all ones when absent).
pub fn information_matrix(
    data: &Dataset,
    params: &ModelParams,
    acceptance: Option<&AcceptancePlan>,
) -> Result<DMatrix<f64>> {
    LusError::check_len("parameter dimension", data.dim(), params.dim())?;
    LusError::check_len("parameter classes", data.classes(), params.classes())?;
    if let Some(plan) = acceptance {
        LusError::check_len("acceptance plan", data.len(), plan.len())?;
    }
    if data.is_empty() {
        return Err(LusError::invalid("information of an empty dataset"));
    }
    let k = data.classes();
    let m = k - 1;
    let w = data.dim() + 1;
    let np = m * w;

    let blocks = par::map_blocks(data.len(), par::BLOCK, |range| -> Result<DMatrix<f64>> {
        let mut acc = DMatrix::<f64>::zeros(np, np);
        let mut z = vec![1.0; w];
        for i in range {
            let x = data.features(i);
            let p = model::predict_proba(params, x, None)?;
            let a = acceptance.map(|plan| plan.per_point[i].as_slice());
            let s = s_kernel(p.as_slice(), a)?;
            z[1..].copy_from_slice(x);
            for j in 0..m {
                for l in j..m {
                    let c = s[(j, l)];
                    for r in 0..w {
                        let cr = c * z[r];
                        for t in 0..w {
                            acc[(j * w + r, l * w + t)] += cr * z[t];
                        }
                    }
                }
            }
        }
        Ok(acc)
    });
    let mut info = DMatrix::<f64>::zeros(np, np);
    for b in blocks {
        info += b?;
    }
    info /= data.len() as f64;
    // Fill the lower block triangle from the upper one.
    for j in 0..m {
        for l in j + 1..m {
            for r in 0..w {
                for t in 0..w {
                    info[(l * w + t, j * w + r)] = info[(j * w + r, l * w + t)];
                }
            }
        }
    }
    Ok(info)
}

/// Plug-in asymptotic variance of `√n (Θ̂ − Θ*)`.
///
/// Fails with [`LusError::SingularInformation`] when the information matrix
/// is not positive definite.
pub fn closed_form_variance(
    data: &Dataset,
    params: &ModelParams,
    acceptance: Option<&AcceptancePlan>,
) -> Result<VarianceEstimate> {
    let info = information_matrix(data, params, acceptance)?;
    let chol = Cholesky::new(info).ok_or(LusError::SingularInformation)?;
    let mut inv = chol.inverse();
    // Symmetrise away rounding from the triangular solves.
    let t = inv.transpose();
    inv = (inv + t) * 0.5;
    Ok(VarianceEstimate {
        matrix: inv,
        kind: VarianceKind::ClosedForm,
    })
}

/// `Σ_i E_{C|x_i}[a(x_i, C)]` under the pilot distribution.
pub fn expected_subsample_size(pilot: &PilotProbs, gamma: f64) -> Result<f64> {
    pilot
        .rows()
        .iter()
        .map(|p| sampling::expected_fraction(p, gamma))
        .sum()
}

/// The `γ ≥ 1` at which the expected LUS fraction under `pilot` equals
/// `target`, by bisection (the fraction is non-increasing in `γ`).
pub fn gamma_for_fraction(pilot: &PilotProbs, target: f64) -> Result<f64> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(LusError::invalid(format!(
            "target fraction must be in (0,1], got {target}"
        )));
    }
    if pilot.is_empty() {
        return Err(LusError::invalid("empty pilot"));
    }
    let n = pilot.len() as f64;
    let frac = |g: f64| expected_subsample_size(pilot, g).map(|s| s / n);
    if frac(1.0)? <= target {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (1.0, 2.0);
    while frac(hi)? > target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(LusError::invalid(format!(
                "target fraction {target} is unreachable"
            )));
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if frac(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}
