//! Acceptance probabilities and the one-pass Bernoulli subsampler.
//!
//! Every scheme assigns each point a full acceptance vector `a(x, ·)` over all
//! `K` classes, since the corrected likelihood needs the offsets
//! `log(a(x,k) / a(x,K))` for every class, not only the observed one.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LusError, Result};
use crate::model::{self, Dataset, LabeledPoint, ModelParams, OffsetVector, Offsets, ProbVector};
use crate::{par, rng};

/// Pilot confidence is capped at `1 − Q_CLAMP`.
pub const Q_CLAMP: f64 = 1e-6;
/// Smallest acceptance probability handed out by the built-in schemes.
pub const A_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Lus,
    Uniform,
    Cc,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Lus => "lus",
            Scheme::Uniform => "uniform",
            Scheme::Cc => "cc",
        })
    }
}

impl FromStr for Scheme {
    type Err = LusError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lus" => Ok(Scheme::Lus),
            "uniform" | "us" => Ok(Scheme::Uniform),
            "cc" | "case-control" => Ok(Scheme::Cc),
            other => Err(LusError::invalid(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Acceptance probabilities `a(x, k)` for all `K` classes at one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceVector {
    a: Vec<f64>,
    q_tilde: f64,
}

impl AcceptanceVector {
    /// Entries must lie in `[0, 1]`; they are raised to `floor`.
    pub fn with_floor(a: Vec<f64>, floor: f64, q_tilde: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&floor) {
            return Err(LusError::invalid(format!("floor {floor} outside [0,1]")));
        }
        if a.len() < 2 {
            return Err(LusError::invalid("acceptance vector needs at least 2 classes"));
        }
        if a.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(LusError::invalid(format!("acceptance outside [0,1]: {a:?}")));
        }
        let a = a.into_iter().map(|v| v.max(floor)).collect();
        Ok(Self { a, q_tilde })
    }

    /// Per-class probabilities with the default floor.
    pub fn new(a: Vec<f64>) -> Result<Self> {
        Self::with_floor(a, A_FLOOR, 0.5)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.a
    }

    pub fn classes(&self) -> usize {
        self.a.len()
    }

    /// Acceptance probability for 1-based class `label`.
    pub fn for_label(&self, label: usize) -> f64 {
        self.a[label - 1]
    }

    /// The clamped pilot confidence `max(0.5, p̃_1, …, p̃_K)`; 0.5 for
    /// schemes that do not use a pilot.
    pub fn q_tilde(&self) -> f64 {
        self.q_tilde
    }

    /// `log(a_k / a_K)` for `k = 1..K−1`.
    pub fn offsets(&self) -> Result<OffsetVector> {
        let last = self.a[self.a.len() - 1];
        OffsetVector::new(
            self.a[..self.a.len() - 1]
                .iter()
                .map(|&ak| (ak / last).ln())
                .collect(),
        )
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma >= 1.0 {
        Ok(())
    } else {
        Err(LusError::invalid(format!("gamma must be >= 1, got {gamma}")))
    }
}

fn clamped_q(p: &ProbVector) -> f64 {
    p.max().clamp(0.5, 1.0 - Q_CLAMP)
}

/// LUS acceptance probabilities for pilot probabilities `p̃` at variance
/// budget `gamma`.
///
/// With `q̃ = clamp(max(0.5, max_k p̃_k), 0.5, 1 − 1e−6)`, the arg-max class
/// (only when its probability is at least 0.5) gets
/// `(1 − q̃) / (γ − max(q̃, γ/2))` and every other class `min(1, 2q̃/γ)`.
pub fn lus_acceptance(p_tilde: &ProbVector, gamma: f64) -> Result<AcceptanceVector> {
    check_gamma(gamma)?;
    let q = clamped_q(p_tilde);
    let top = p_tilde.argmax();
    let majority = p_tilde.as_slice()[top] >= 0.5;
    let other = (2.0 * q / gamma).min(1.0);
    let mut a = vec![other; p_tilde.len()];
    if majority {
        a[top] = (1.0 - q) / (gamma - q.max(0.5 * gamma));
    }
    AcceptanceVector::with_floor(a, A_FLOOR, q)
}

/// Uniform sampling at rate `1/γ`.
pub fn uniform_acceptance(k: usize, gamma: f64) -> Result<AcceptanceVector> {
    check_gamma(gamma)?;
    if k < 2 {
        return Err(LusError::invalid("class count must be >= 2"));
    }
    AcceptanceVector::with_floor(vec![1.0 / gamma; k], A_FLOOR, 0.5)
}

/// Expected acceptance `E_{C|X}[a(X, C)]` under the pilot distribution:
/// `4q̃(1 − q̃)/γ` when `γ ≥ 2q̃`, otherwise `γ(1 − q̃)/(γ − q̃)`.
pub fn expected_fraction(p_tilde: &ProbVector, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let q = clamped_q(p_tilde);
    Ok(if gamma >= 2.0 * q {
        4.0 * q * (1.0 - q) / gamma
    } else {
        gamma * (1.0 - q) / (gamma - q)
    })
}

/// Per-class acceptance probabilities hitting an expected total of `budget`
/// points with equal per-class quotas.
///
/// Classes smaller than the current quota are kept whole and their unused
/// quota is split among the remaining classes, repeated until stable.
pub fn case_control_plan(data: &Dataset, budget: usize) -> Result<Vec<f64>> {
    let n = data.len();
    if budget == 0 || budget > n {
        return Err(LusError::invalid(format!(
            "case-control budget must be in 1..={n}, got {budget}"
        )));
    }
    let counts = data.class_counts();
    let mut a = vec![1.0; counts.len()];
    let mut active: Vec<usize> = (0..counts.len()).collect();
    let mut remaining = budget as f64;
    loop {
        let quota = remaining / active.len() as f64;
        let (small, large): (Vec<usize>, Vec<usize>) =
            active.iter().partition(|&&k| (counts[k] as f64) < quota);
        if small.is_empty() {
            for &k in &large {
                a[k] = (quota / counts[k] as f64).min(1.0);
            }
            break;
        }
        for &k in &small {
            remaining -= counts[k] as f64;
        }
        active = large;
        if active.is_empty() {
            break;
        }
    }
    Ok(a)
}

/// Pilot class probabilities, one row per point of the dataset being sampled.
#[derive(Clone, Debug, PartialEq)]
pub struct PilotProbs(Vec<ProbVector>);

impl PilotProbs {
    pub fn new(rows: Vec<ProbVector>) -> Result<Self> {
        if let Some(first) = rows.first() {
            let k = first.len();
            if let Some(r) = rows.iter().find(|r| r.len() != k) {
                return Err(LusError::DimensionMismatch {
                    what: "pilot row",
                    expected: k,
                    got: r.len(),
                });
            }
        }
        Ok(Self(rows))
    }

    /// Evaluates the pilot model on every point of `data`.
    pub fn from_model(params: &ModelParams, data: &Dataset) -> Result<Self> {
        LusError::check_len("pilot dimension", data.dim(), params.dim())?;
        LusError::check_len("pilot classes", data.classes(), params.classes())?;
        let rows = par::map_blocks(data.len(), par::BLOCK, |range| {
            range
                .map(|i| model::predict_proba(params, data.features(i), None))
                .collect::<Result<Vec<_>>>()
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
        Ok(Self(rows))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn rows(&self) -> &[ProbVector] {
        &self.0
    }
}

/// Acceptance vectors for every point of a dataset, tagged with the scheme
/// and nominal `γ` that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct AcceptancePlan {
    pub scheme: Scheme,
    pub gamma: f64,
    pub per_point: Vec<AcceptanceVector>,
}

/// The audit record written next to a subsample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub gamma: f64,
    pub scheme: Scheme,
    /// Mean acceptance probability of the points carrying each label
    /// (exact per-class rates for the uniform and case-control schemes).
    pub per_class: Vec<f64>,
    pub expected_size: f64,
    pub n: usize,
}

impl AcceptancePlan {
    pub fn lus(pilot: &PilotProbs, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let per_point = par::map_blocks(pilot.len(), par::BLOCK, |range| {
            range
                .map(|i| lus_acceptance(&pilot.rows()[i], gamma))
                .collect::<Result<Vec<_>>>()
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
        Ok(Self {
            scheme: Scheme::Lus,
            gamma,
            per_point,
        })
    }

    pub fn uniform(n: usize, k: usize, gamma: f64) -> Result<Self> {
        let a = uniform_acceptance(k, gamma)?;
        Ok(Self {
            scheme: Scheme::Uniform,
            gamma,
            per_point: vec![a; n],
        })
    }

    /// Case-control plan with expected size `budget`; its nominal `γ` is `n / budget`.
    pub fn case_control(data: &Dataset, budget: usize) -> Result<Self> {
        let a = AcceptanceVector::new(case_control_plan(data, budget)?)?;
        Ok(Self {
            scheme: Scheme::Cc,
            gamma: data.len() as f64 / budget as f64,
            per_point: vec![a; data.len()],
        })
    }

    pub fn len(&self) -> usize {
        self.per_point.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_point.is_empty()
    }

    /// `Σ_i a(x_i, c_i)`, the expected subsample size given the observed labels.
    pub fn expected_size(&self, data: &Dataset) -> Result<f64> {
        LusError::check_len("acceptance plan", data.len(), self.len())?;
        Ok(self
            .per_point
            .iter()
            .zip(data.labels())
            .map(|(a, &c)| a.for_label(c))
            .sum())
    }

    pub fn summary(&self, data: &Dataset) -> Result<PlanSummary> {
        LusError::check_len("acceptance plan", data.len(), self.len())?;
        let k = data.classes();
        let mut sums = vec![0.0; k];
        let counts = data.class_counts();
        for (a, &c) in self.per_point.iter().zip(data.labels()) {
            sums[c - 1] += a.for_label(c);
        }
        let per_class = match (self.scheme, self.per_point.first()) {
            (Scheme::Lus, _) | (_, None) => sums
                .iter()
                .zip(&counts)
                .map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
                .collect(),
            (_, Some(first)) => first.as_slice().to_vec(),
        };
        Ok(PlanSummary {
            gamma: self.gamma,
            scheme: self.scheme,
            per_class,
            expected_size: self.expected_size(data)?,
            n: data.len(),
        })
    }
}

/// One accepted point.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsampleEntry {
    pub index: usize,
    pub point: LabeledPoint,
    pub offsets: OffsetVector,
}

/// The accepted points of one Bernoulli pass, ordered by original index.
#[derive(Clone, Debug, PartialEq)]
pub struct Subsample {
    pub entries: Vec<SubsampleEntry>,
    pub n_original: usize,
    pub gamma: f64,
    pub k: usize,
    pub d: usize,
}

impl Subsample {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fraction(&self) -> f64 {
        if self.n_original == 0 {
            0.0
        } else {
            self.len() as f64 / self.n_original as f64
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }

    /// The accepted points as a dataset plus their aligned offsets.
    pub fn to_dataset(&self) -> Result<(Dataset, Offsets)> {
        let mut features = Vec::with_capacity(self.len() * self.d);
        let mut labels = Vec::with_capacity(self.len());
        let mut offs = Vec::with_capacity(self.len());
        for e in &self.entries {
            features.extend_from_slice(&e.point.features);
            labels.push(e.point.label);
            offs.push(e.offsets.clone());
        }
        let data = Dataset::from_flat(features, labels, self.d, self.k)?;
        let offsets = Offsets::from_vectors(&offs, self.k)?;
        Ok((data, offsets))
    }
}

/// Keeps point `i` with probability `a(x_i, c_i)`, drawing from the stream
/// keyed by `(seed, i)`.
pub fn draw_subsample(data: &Dataset, plan: &AcceptancePlan, seed: u64) -> Result<Subsample> {
    LusError::check_len("acceptance plan", data.len(), plan.len())?;
    if let Some(a) = plan.per_point.iter().find(|a| a.classes() != data.classes()) {
        return Err(LusError::DimensionMismatch {
            what: "acceptance classes",
            expected: data.classes(),
            got: a.classes(),
        });
    }
    let blocks = par::map_blocks(data.len(), par::BLOCK, |range| -> Result<Vec<SubsampleEntry>> {
        let mut out = Vec::new();
        for i in range {
            let a = &plan.per_point[i];
            let u: f64 = rng::item_rng(seed, i as u64).random();
            if u < a.for_label(data.label(i)) {
                out.push(SubsampleEntry {
                    index: i,
                    point: data.point(i),
                    offsets: a.offsets()?,
                });
            }
        }
        Ok(out)
    });
    let mut entries = Vec::new();
    for b in blocks {
        entries.extend(b?);
    }
    Ok(Subsample {
        entries,
        n_original: data.len(),
        gamma: plan.gamma,
        k: data.classes(),
        d: data.dim(),
    })
}
