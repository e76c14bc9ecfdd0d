//! Maximum-likelihood fits: plain, offset-corrected, and pilot.
//!
//! All fits minimise the averaged negative log-likelihood with damped Newton
//! steps from `Θ = 0`. When the Hessian cannot be factorised a ridge is added
//! to its diagonal for that step only; the objective itself is never
//! regularised.

use nalgebra::{linalg::Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LusError, Result};
use crate::model::{Dataset, ModelParams, Objective};
use crate::rng;
use crate::sampling::{draw_subsample, AcceptancePlan, Subsample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Convergence threshold on the sup-norm of the gradient.
    pub tol: f64,
    pub max_iters: usize,
    /// Diagonal jitter used only when the Hessian factorisation fails.
    pub ridge: f64,
    pub line_search_shrink: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 100,
            ridge: 1e-10,
            line_search_shrink: 0.5,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(LusError::invalid(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(LusError::invalid("max_iters must be >= 1"));
        }
        if !(self.ridge >= 0.0) {
            return Err(LusError::invalid(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        if !(self.line_search_shrink > 0.0 && self.line_search_shrink < 1.0) {
            return Err(LusError::invalid(format!(
                "line_search_shrink must be in (0,1), got {}",
                self.line_search_shrink
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    pub converged: bool,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub objective: f64,
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

// Smallest step fraction tried before the line search gives up.
const MIN_STEP: f64 = 1e-12;

fn newton_direction(hessian: DMatrix<f64>, gradient: &[f64], ridge: f64) -> Option<DVector<f64>> {
    let g = DVector::from_column_slice(gradient);
    if let Some(chol) = Cholesky::new(hessian.clone()) {
        return Some(chol.solve(&g));
    }
    let scale = hessian.diagonal().amax().max(1.0);
    let mut jitter = ridge.max(f64::EPSILON) * scale;
    for _ in 0..20 {
        let mut h = hessian.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(h) {
            return Some(chol.solve(&g));
        }
        jitter *= 10.0;
    }
    None
}

/// Damped Newton minimisation of an objective starting at zero.
pub fn minimize(objective: &Objective<'_>, config: &SolverConfig) -> Result<FitResult> {
    config.validate()?;
    let data = objective.data();
    if data.is_empty() {
        return Err(LusError::invalid("cannot fit an empty dataset"));
    }
    if !objective.every_class_present() {
        return Err(LusError::DegenerateFit(
            "at least one class has no observations; its intercept diverges".into(),
        ));
    }

    let mut params = ModelParams::zeros(data.classes(), data.dim());
    let mut eval = objective.evaluate(&params, true);
    let mut iterations = 0;
    while iterations < config.max_iters {
        if sup_norm(&eval.gradient) <= config.tol {
            break;
        }
        let hessian = eval.hessian.take().expect("hessian requested");
        let Some(dir) = newton_direction(hessian, &eval.gradient, config.ridge) else {
            break;
        };
        let mut step = 1.0;
        let mut accepted = None;
        while step >= MIN_STEP {
            let cand: Vec<f64> = params
                .as_slice()
                .iter()
                .zip(dir.iter())
                .map(|(t, d)| t - step * d)
                .collect();
            if cand.iter().all(|v| v.is_finite()) {
                let cand = params.with_coefficients(cand);
                let value = objective.value_unchecked(&cand);
                if value <= eval.value {
                    accepted = Some(cand);
                    break;
                }
            }
            step *= config.line_search_shrink;
        }
        iterations += 1;
        let Some(next) = accepted else {
            break;
        };
        params = next;
        eval = objective.evaluate(&params, true);
    }

    let final_grad_norm = sup_norm(&eval.gradient);
    Ok(FitResult {
        params,
        converged: final_grad_norm <= config.tol,
        iterations,
        final_grad_norm,
        objective: eval.value,
    })
}

/// Full-data MLE of the plain logistic model.
pub fn fit_mle(data: &Dataset, config: &SolverConfig) -> Result<FitResult> {
    let objective = Objective::new(data, None, None)?;
    minimize(&objective, config)
}

/// MLE of the offset logistic model on a subsample.
///
/// Offsets enter the logits only; the returned parameters are already in the
/// coordinates of the original population model.
pub fn fit_subsample_mle(sub: &Subsample, config: &SolverConfig) -> Result<FitResult> {
    if sub.is_empty() {
        return Err(LusError::DegenerateFit("subsample is empty".into()));
    }
    let (data, offsets) = sub.to_dataset()?;
    let objective = Objective::new(&data, Some(&offsets), None)?;
    minimize(&objective, config)
}

/// Fits a pilot model on a uniform Bernoulli(`fraction`) subsample of `data`.
///
/// A degenerate or non-converged first attempt is retried once with the
/// fraction doubled.
pub fn train_pilot(data: &Dataset, fraction: f64, seed: u64) -> Result<ModelParams> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(LusError::invalid(format!(
            "pilot fraction must be in (0,1], got {fraction}"
        )));
    }
    let config = SolverConfig::default();
    let mut fraction = fraction;
    let mut last_err = None;
    for attempt in 0..2u64 {
        let fit = if fraction >= 1.0 {
            fit_mle(data, &config)
        } else {
            let plan = AcceptancePlan::uniform(data.len(), data.classes(), 1.0 / fraction)?;
            let sub = draw_subsample(data, &plan, rng::derive_indexed(seed, attempt))?;
            let picked = data.select(&sub.indices());
            fit_mle(&picked, &config)
        };
        match fit {
            Ok(f) if f.converged => return Ok(f.params),
            Ok(f) => {
                last_err = Some(LusError::DegenerateFit(format!(
                    "pilot did not converge at fraction {fraction} (grad {:e})",
                    f.final_grad_norm
                )))
            }
            Err(e @ (LusError::DegenerateFit(_) | LusError::InvalidArgument(_))) => {
                last_err = Some(e)
            }
            Err(e) => return Err(e),
        }
        fraction = (2.0 * fraction).min(1.0);
    }
    Err(match last_err {
        Some(LusError::DegenerateFit(m)) => LusError::DegenerateFit(m),
        Some(e) => LusError::DegenerateFit(format!("pilot subsample unusable: {e}")),
        None => LusError::DegenerateFit("pilot fit failed".into()),
    })
}
