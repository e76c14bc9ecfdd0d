//! Multi-class logistic model with class `K` as the reference.
//!
//! Class labels are 1-based. Class `k < K` has logit
//! `f_k(x) = intercept_k + w_kᵀ x`, optionally shifted by a known per-point
//! offset; the reference class has logit 0. Likelihood, gradient and Hessian
//! are averaged over all points of the dataset (including points with weight
//! zero) and accumulated in fixed index blocks.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LusError, Result};
use crate::par;

/// One observation `(x, c)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub features: Vec<f64>,
    pub label: usize,
}

impl LabeledPoint {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }
}

/// An immutable set of labelled points sharing dimension `d` and class count `K`.
///
/// Features are stored row-major in one buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    d: usize,
    k: usize,
}

impl Dataset {
    pub fn new(points: Vec<LabeledPoint>, d: usize, k: usize) -> Result<Self> {
        let mut features = Vec::with_capacity(points.len() * d);
        let mut labels = Vec::with_capacity(points.len());
        for p in points {
            LusError::check_len("point features", d, p.features.len())?;
            features.extend_from_slice(&p.features);
            labels.push(p.label);
        }
        Self::from_flat(features, labels, d, k)
    }

    /// Builds a dataset from a row-major `n × d` feature buffer.
    pub fn from_flat(features: Vec<f64>, labels: Vec<usize>, d: usize, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(LusError::invalid(format!("class count must be >= 2, got {k}")));
        }
        LusError::check_len("feature buffer", labels.len() * d, features.len())?;
        if let Some(bad) = labels.iter().find(|&&c| c == 0 || c > k) {
            return Err(LusError::invalid(format!("label {bad} outside 1..={k}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(LusError::invalid("non-finite feature value"));
        }
        Ok(Self {
            features,
            labels,
            d,
            k,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn point(&self, i: usize) -> LabeledPoint {
        LabeledPoint::new(self.features(i).to_vec(), self.labels[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        (0..self.len()).map(move |i| (self.features(i), self.labels[i]))
    }

    /// Number of points in each class, index `k - 1` for class `k`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &c in &self.labels {
            counts[c - 1] += 1;
        }
        counts
    }

    /// A new dataset made of the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.features(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            d: self.d,
            k: self.k,
        }
    }
}

/// Stacked parameters `Θ = (θ_1, …, θ_{K−1})`.
///
/// Row `k` (0-based, class `k + 1`) holds the intercept in column 0 followed
/// by the `d` weights. The flat layout is row-major, which is also the
/// coordinate order of gradients, Hessians and variance matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRecord", into = "ParamsRecord")]
pub struct ModelParams {
    k: usize,
    d: usize,
    coefficients: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsRecord {
    k: usize,
    d: usize,
    coefficients: Vec<Vec<f64>>,
}

impl TryFrom<ParamsRecord> for ModelParams {
    type Error = LusError;

    fn try_from(r: ParamsRecord) -> Result<Self> {
        let params = ModelParams::from_rows(r.coefficients)?;
        if params.k != r.k || params.d != r.d {
            return Err(LusError::invalid(format!(
                "header says k={}, d={} but coefficients imply k={}, d={}",
                r.k, r.d, params.k, params.d
            )));
        }
        Ok(params)
    }
}

impl From<ModelParams> for ParamsRecord {
    fn from(p: ModelParams) -> Self {
        ParamsRecord {
            k: p.k,
            d: p.d,
            coefficients: (0..p.k - 1).map(|j| p.row(j).to_vec()).collect(),
        }
    }
}

impl ModelParams {
    pub fn zeros(k: usize, d: usize) -> Self {
        assert!(k >= 2, "class count must be >= 2");
        Self {
            k,
            d,
            coefficients: vec![0.0; (k - 1) * (d + 1)],
        }
    }

    pub fn from_flat(k: usize, d: usize, coefficients: Vec<f64>) -> Result<Self> {
        if k < 2 {
            return Err(LusError::invalid(format!("class count must be >= 2, got {k}")));
        }
        LusError::check_len("coefficients", (k - 1) * (d + 1), coefficients.len())?;
        if coefficients.iter().any(|v| !v.is_finite()) {
            return Err(LusError::invalid("non-finite coefficient"));
        }
        Ok(Self { k, d, coefficients })
    }

    /// One row per non-reference class: `[intercept, w_1, …, w_d]`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| LusError::invalid("no coefficient rows"))?;
        if first.is_empty() {
            return Err(LusError::invalid("coefficient rows need an intercept"));
        }
        let d = first.len() - 1;
        let k = rows.len() + 1;
        let mut flat = Vec::with_capacity((k - 1) * (d + 1));
        for r in &rows {
            LusError::check_len("coefficient row", d + 1, r.len())?;
            flat.extend_from_slice(r);
        }
        Self::from_flat(k, d, flat)
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// `(K − 1)(d + 1)`.
    pub fn num_params(&self) -> usize {
        self.coefficients.len()
    }

    /// Row for class `j + 1` (0-based `j < K − 1`).
    pub fn row(&self, j: usize) -> &[f64] {
        let w = self.d + 1;
        &self.coefficients[j * w..(j + 1) * w]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.k - 1, self.d + 1, &self.coefficients)
    }

    pub(crate) fn with_coefficients(&self, coefficients: Vec<f64>) -> Self {
        debug_assert_eq!(coefficients.len(), self.coefficients.len());
        Self {
            k: self.k,
            d: self.d,
            coefficients,
        }
    }

    fn check_input(&self, x: &[f64], offsets: Option<&[f64]>) -> Result<()> {
        LusError::check_len("features", self.d, x.len())?;
        if let Some(o) = offsets {
            LusError::check_len("offsets", self.k - 1, o.len())?;
        }
        Ok(())
    }
}

/// A probability vector over the `K` classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

pub(crate) const SIMPLEX_TOL: f64 = 1e-12;

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(LusError::invalid("probability vector needs at least 2 entries"));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(LusError::invalid(format!("probability outside [0,1]: {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL * probs.len() as f64 {
            return Err(LusError::invalid(format!("probabilities sum to {total}")));
        }
        Ok(Self(probs))
    }

    pub(crate) fn from_unchecked(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn max(&self) -> f64 {
        self.0[self.argmax()]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-point logit offsets `log(a(x,k) / a(x,K))`, `k = 1..K−1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OffsetVector(Vec<f64>);

impl OffsetVector {
    pub fn new(offsets: Vec<f64>) -> Result<Self> {
        if offsets.iter().any(|o| !o.is_finite()) {
            return Err(LusError::invalid(format!("non-finite offset: {offsets:?}")));
        }
        Ok(Self(offsets))
    }

    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k - 1])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Offsets for every point of a dataset, stored row-major `n × (K − 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Offsets {
    values: Vec<f64>,
    width: usize,
}

impl Offsets {
    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            values: vec![0.0; n * (k - 1)],
            width: k - 1,
        }
    }

    pub fn from_vectors(rows: &[OffsetVector], k: usize) -> Result<Self> {
        let width = k - 1;
        let mut values = Vec::with_capacity(rows.len() * width);
        for r in rows {
            LusError::check_len("offset vector", width, r.len())?;
            values.extend_from_slice(r.as_slice());
        }
        Ok(Self { values, width })
    }

    pub fn len(&self) -> usize {
        self.values.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }
}

#[inline]
fn logits_raw(params: &ModelParams, x: &[f64], offsets: Option<&[f64]>, out: &mut [f64]) {
    let w = params.d + 1;
    for (j, o) in out.iter_mut().enumerate() {
        let row = &params.coefficients[j * w..(j + 1) * w];
        let mut acc = row[0];
        for (c, xi) in row[1..].iter().zip(x) {
            acc += c * xi;
        }
        if let Some(off) = offsets {
            acc += off[j];
        }
        *o = acc;
    }
}

/// Fills `probs` (length K) from K − 1 logits and returns `log(1 + Σ e^{g_k})`.
///
/// Uses max-logit subtraction, so large logits never overflow.
#[inline]
pub(crate) fn softmax_ref(logits: &[f64], probs: &mut [f64]) -> f64 {
    let m = logits.iter().copied().fold(0.0_f64, f64::max);
    let base = (-m).exp();
    let mut total = base;
    for (p, &g) in probs.iter_mut().zip(logits) {
        *p = (g - m).exp();
        total += *p;
    }
    let last = probs.len() - 1;
    probs[last] = base;
    for p in probs.iter_mut() {
        *p /= total;
    }
    m + total.ln()
}

/// Logits `g_k(x) = intercept_k + w_kᵀ x (+ offset_k)`, `k = 1..K−1`.
pub fn logits(params: &ModelParams, x: &[f64], offsets: Option<&OffsetVector>) -> Result<Vec<f64>> {
    let off = offsets.map(OffsetVector::as_slice);
    params.check_input(x, off)?;
    let mut out = vec![0.0; params.k - 1];
    logits_raw(params, x, off, &mut out);
    Ok(out)
}

/// Class probabilities at `x`, reference class last.
pub fn predict_proba(
    params: &ModelParams,
    x: &[f64],
    offsets: Option<&OffsetVector>,
) -> Result<ProbVector> {
    let g = logits(params, x, offsets)?;
    let mut probs = vec![0.0; params.k];
    softmax_ref(&g, &mut probs);
    Ok(ProbVector::from_unchecked(probs))
}

/// Fraction of points whose most probable class equals the label.
pub fn accuracy(params: &ModelParams, data: &Dataset) -> Result<f64> {
    LusError::check_len("dataset dimension", params.d, data.dim())?;
    LusError::check_len("dataset classes", params.k, data.classes())?;
    if data.is_empty() {
        return Err(LusError::invalid("accuracy of an empty dataset"));
    }
    let k = params.k;
    let hits: usize = par::map_blocks(data.len(), par::BLOCK, |range| {
        let mut g = vec![0.0; k - 1];
        let mut hits = 0usize;
        for i in range {
            logits_raw(params, data.features(i), None, &mut g);
            // Reference class has logit 0.
            let mut best = k - 1;
            let mut best_val = 0.0;
            for (j, &v) in g.iter().enumerate() {
                if v > best_val || (v == best_val && j < best) {
                    best = j;
                    best_val = v;
                }
            }
            if best + 1 == data.label(i) {
                hits += 1;
            }
        }
        hits
    })
    .into_iter()
    .sum();
    Ok(hits as f64 / data.len() as f64)
}

/// The averaged negative log-likelihood of a (possibly offset, possibly
/// indicator-weighted) dataset under the logistic model.
///
/// Weights are `{0,1}` indicators by type: a point with weight `false`
/// contributes nothing but still counts in the `1/n` normalisation.
#[derive(Clone, Copy, Debug)]
pub struct Objective<'a> {
    data: &'a Dataset,
    offsets: Option<&'a Offsets>,
    weights: Option<&'a [bool]>,
}

/// Value, gradient and (optionally) Hessian at one parameter vector.
#[derive(Clone, Debug)]
pub(crate) struct Evaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Option<DMatrix<f64>>,
}

struct BlockAcc {
    value: f64,
    grad: Vec<f64>,
    // One (d+1)² upper-triangular slab per class pair (j ≤ l).
    hess: Vec<f64>,
}

impl<'a> Objective<'a> {
    pub fn new(
        data: &'a Dataset,
        offsets: Option<&'a Offsets>,
        weights: Option<&'a [bool]>,
    ) -> Result<Self> {
        if let Some(o) = offsets {
            LusError::check_len("offset rows", data.len(), o.len())?;
            LusError::check_len("offset width", data.classes() - 1, o.width())?;
        }
        if let Some(w) = weights {
            LusError::check_len("weights", data.len(), w.len())?;
        }
        Ok(Self {
            data,
            offsets,
            weights,
        })
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    fn check_params(&self, params: &ModelParams) -> Result<()> {
        LusError::check_len("parameter dimension", self.data.dim(), params.d)?;
        LusError::check_len("parameter classes", self.data.classes(), params.k)
    }

    /// Whether every class has at least one point with nonzero weight.
    pub fn every_class_present(&self) -> bool {
        let mut seen = vec![false; self.data.classes()];
        for i in 0..self.data.len() {
            if self.weights.is_none_or(|w| w[i]) {
                seen[self.data.label(i) - 1] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn value(&self, params: &ModelParams) -> Result<f64> {
        self.check_params(params)?;
        Ok(self.accumulate(params, false, false).value)
    }

    pub fn gradient_matrix(&self, params: &ModelParams) -> Result<DMatrix<f64>> {
        self.check_params(params)?;
        let e = self.accumulate(params, true, false);
        Ok(DMatrix::from_row_slice(params.k - 1, params.d + 1, &e.gradient))
    }

    pub fn hessian_matrix(&self, params: &ModelParams) -> Result<DMatrix<f64>> {
        self.check_params(params)?;
        Ok(self
            .accumulate(params, true, true)
            .hessian
            .expect("hessian requested"))
    }

    pub(crate) fn evaluate(&self, params: &ModelParams, want_hessian: bool) -> Evaluation {
        self.accumulate(params, true, want_hessian)
    }

    pub(crate) fn value_unchecked(&self, params: &ModelParams) -> f64 {
        self.accumulate(params, false, false).value
    }

    fn accumulate(&self, params: &ModelParams, want_grad: bool, want_hess: bool) -> Evaluation {
        let k = self.data.classes();
        let d = self.data.dim();
        let w = d + 1;
        let m = k - 1;
        let np = m * w;
        let pairs = m * (m + 1) / 2;
        let slab = w * w;

        let blocks = par::map_blocks(self.data.len(), par::BLOCK, |range| {
            let mut acc = BlockAcc {
                value: 0.0,
                grad: if want_grad { vec![0.0; np] } else { Vec::new() },
                hess: if want_hess { vec![0.0; pairs * slab] } else { Vec::new() },
            };
            let mut g = vec![0.0; m];
            let mut p = vec![0.0; k];
            let mut z = vec![1.0; w];
            for i in range {
                if let Some(wts) = self.weights {
                    if !wts[i] {
                        continue;
                    }
                }
                let x = self.data.features(i);
                let c = self.data.label(i);
                logits_raw(params, x, self.offsets.map(|o| o.row(i)), &mut g);
                let lse = softmax_ref(&g, &mut p);
                acc.value += if c < k { lse - g[c - 1] } else { lse };
                if !want_grad {
                    continue;
                }
                z[1..].copy_from_slice(x);
                for j in 0..m {
                    let resid = p[j] - if c == j + 1 { 1.0 } else { 0.0 };
                    let gj = &mut acc.grad[j * w..(j + 1) * w];
                    for (gv, zv) in gj.iter_mut().zip(&z) {
                        *gv += resid * zv;
                    }
                }
                if !want_hess {
                    continue;
                }
                let mut pair = 0;
                for j in 0..m {
                    for l in j..m {
                        let cw = if j == l {
                            p[j] * (1.0 - p[j])
                        } else {
                            -p[j] * p[l]
                        };
                        let s = &mut acc.hess[pair * slab..(pair + 1) * slab];
                        for r in 0..w {
                            let a = cw * z[r];
                            let row = &mut s[r * w + r..(r + 1) * w];
                            for (hv, zv) in row.iter_mut().zip(&z[r..]) {
                                *hv += a * zv;
                            }
                        }
                        pair += 1;
                    }
                }
            }
            acc
        });

        let mut value = 0.0;
        let mut grad = vec![0.0; if want_grad { np } else { 0 }];
        let mut hess = vec![0.0; if want_hess { pairs * slab } else { 0 }];
        for b in &blocks {
            value += b.value;
            for (t, s) in grad.iter_mut().zip(&b.grad) {
                *t += s;
            }
            for (t, s) in hess.iter_mut().zip(&b.hess) {
                *t += s;
            }
        }
        let n = self.data.len();
        let scale = if n == 0 { 0.0 } else { 1.0 / n as f64 };
        value *= scale;
        grad.iter_mut().for_each(|v| *v *= scale);

        let hessian = want_hess.then(|| {
            let mut h = DMatrix::zeros(np, np);
            let mut pair = 0;
            for j in 0..m {
                for l in j..m {
                    let s = &hess[pair * slab..(pair + 1) * slab];
                    for r in 0..w {
                        for c in r..w {
                            let v = s[r * w + c] * scale;
                            h[(j * w + r, l * w + c)] = v;
                            h[(j * w + c, l * w + r)] = v;
                            h[(l * w + r, j * w + c)] = v;
                            h[(l * w + c, j * w + r)] = v;
                        }
                    }
                    pair += 1;
                }
            }
            h
        });

        Evaluation {
            value,
            gradient: grad,
            hessian,
        }
    }
}

/// Averaged negative log-likelihood
/// `(1/n) Σ_i w_i [log(1 + Σ_k e^{g_k(x_i)}) − g_{c_i}(x_i) 1(c_i ≠ K)]`.
pub fn nll(
    params: &ModelParams,
    data: &Dataset,
    offsets: Option<&Offsets>,
    weights: Option<&[bool]>,
) -> Result<f64> {
    Objective::new(data, offsets, weights)?.value(params)
}

/// Gradient of [`nll`] as a `(K − 1) × (d + 1)` matrix.
pub fn gradient(
    params: &ModelParams,
    data: &Dataset,
    offsets: Option<&Offsets>,
    weights: Option<&[bool]>,
) -> Result<DMatrix<f64>> {
    Objective::new(data, offsets, weights)?.gradient_matrix(params)
}

/// Hessian of [`nll`] over the flat row-major parameter vector.
pub fn hessian(
    params: &ModelParams,
    data: &Dataset,
    offsets: Option<&Offsets>,
    weights: Option<&[bool]>,
) -> Result<DMatrix<f64>> {
    Objective::new(data, offsets, weights)?.hessian_matrix(params)
}
