//! Gaussian class-conditional populations and the replication harness.
//!
//! With identity covariance the posterior log-odds are linear in `x`, so the
//! logistic model is correctly specified and the true parameters are known in
//! closed form. The harness fits the full-data MLE and the LUS, uniform and
//! case-control estimators on many independent datasets and reports
//! per-coordinate variance ratios against the full-data fit.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::asymptotics;
use crate::error::{LusError, Result};
use crate::estimation::{fit_mle, fit_subsample_mle, train_pilot, FitResult, SolverConfig};
use crate::model::{self, Dataset, ModelParams, ProbVector};
use crate::sampling::{draw_subsample, AcceptancePlan, PilotProbs};
use crate::{par, rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureSpec {
    pub k: usize,
    pub d: usize,
    pub means: Vec<Vec<f64>>,
    /// Only identity covariance is supported.
    pub identity_covariance: bool,
    pub priors: ProbVector,
}

/// The two built-in populations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpecName {
    MarginalImbalance,
    MarginalBalance,
}

impl SpecName {
    pub fn spec(self) -> GaussianMixtureSpec {
        match self {
            SpecName::MarginalImbalance => marginal_imbalance_spec(),
            SpecName::MarginalBalance => marginal_balance_spec(),
        }
    }
}

impl fmt::Display for SpecName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpecName::MarginalImbalance => "marginal-imbalance",
            SpecName::MarginalBalance => "marginal-balance",
        })
    }
}

impl FromStr for SpecName {
    type Err = LusError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "marginal-imbalance" => Ok(SpecName::MarginalImbalance),
            "marginal-balance" => Ok(SpecName::MarginalBalance),
            other => Err(LusError::invalid(format!(
                "unknown spec `{other}` (expected marginal-imbalance or marginal-balance)"
            ))),
        }
    }
}

fn block_means() -> Vec<Vec<f64>> {
    let mut m1 = vec![0.0; 20];
    let mut m2 = vec![0.0; 20];
    m1[..10].fill(1.0);
    m2[10..].fill(1.0);
    vec![m1, m2, vec![0.0; 20]]
}

/// Three classes in 20 dimensions; class 2 holds 80% of the mass.
pub fn marginal_imbalance_spec() -> GaussianMixtureSpec {
    GaussianMixtureSpec {
        k: 3,
        d: 20,
        means: block_means(),
        identity_covariance: true,
        priors: ProbVector::from_unchecked(vec![0.1, 0.8, 0.1]),
    }
}

/// Same means as [`marginal_imbalance_spec`] with equal priors.
pub fn marginal_balance_spec() -> GaussianMixtureSpec {
    GaussianMixtureSpec {
        priors: ProbVector::from_unchecked(vec![1.0 / 3.0; 3]),
        ..marginal_imbalance_spec()
    }
}

impl GaussianMixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.identity_covariance {
            return Err(LusError::Unsupported(
                "only identity class covariances are supported".into(),
            ));
        }
        LusError::check_len("spec means", self.k, self.means.len())?;
        LusError::check_len("spec priors", self.k, self.priors.len())?;
        for m in &self.means {
            LusError::check_len("spec mean", self.d, m.len())?;
        }
        ProbVector::new(self.priors.as_slice().to_vec())?;
        Ok(())
    }
}

/// Exact posterior log-odds against class `K`:
/// weights `μ_k − μ_K`, intercept `−(‖μ_k‖² − ‖μ_K‖²)/2 + log(π_k/π_K)`.
pub fn true_params(spec: &GaussianMixtureSpec) -> Result<ModelParams> {
    spec.validate()?;
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let last = &spec.means[spec.k - 1];
    let pi = spec.priors.as_slice();
    let mut rows = Vec::with_capacity(spec.k - 1);
    for j in 0..spec.k - 1 {
        let mu = &spec.means[j];
        let mut row = Vec::with_capacity(spec.d + 1);
        row.push(-0.5 * (sq(mu) - sq(last)) + (pi[j] / pi[spec.k - 1]).ln());
        row.extend(mu.iter().zip(last).map(|(a, b)| a - b));
        rows.push(row);
    }
    ModelParams::from_rows(rows)
}

/// Draws `n` labelled points; point `i` uses the stream `(seed, i)`.
pub fn generate(spec: &GaussianMixtureSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(LusError::invalid("n must be >= 1"));
    }
    let d = spec.d;
    let mut cumulative = Vec::with_capacity(spec.k);
    let mut acc = 0.0;
    for p in spec.priors.as_slice() {
        acc += p;
        cumulative.push(acc);
    }
    let blocks = par::map_blocks(n, par::BLOCK, |range| {
        let mut feats = Vec::with_capacity(range.len() * d);
        let mut labels = Vec::with_capacity(range.len());
        for i in range {
            let mut r = rng::item_rng(seed, i as u64);
            let u: f64 = r.random();
            let c = cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(spec.k - 1);
            labels.push(c + 1);
            for mu in &spec.means[c] {
                let z: f64 = r.sample(StandardNormal);
                feats.push(mu + z);
            }
        }
        (feats, labels)
    });
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (f, l) in blocks {
        features.extend(f);
        labels.extend(l);
    }
    Dataset::from_flat(features, labels, d, spec.k)
}

/// The γ grid 1.1, 1.2, …, 1.9, 2, 3, …, 10.
pub fn default_gammas() -> Vec<f64> {
    let mut g: Vec<f64> = (11..=19).map(|i| i as f64 / 10.0).collect();
    g.extend((2..=10).map(|i| i as f64));
    g
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationConfig {
    pub spec: GaussianMixtureSpec,
    pub n: usize,
    pub n_test: usize,
    pub gammas: Vec<f64>,
    pub reps: usize,
    pub pilot_fraction: f64,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl ReplicationConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.solver.validate()?;
        if self.reps < 2 {
            return Err(LusError::invalid("reps must be >= 2"));
        }
        if self.n == 0 || self.n_test == 0 {
            return Err(LusError::invalid("n and n_test must be >= 1"));
        }
        if self.gammas.is_empty() {
            return Err(LusError::invalid("at least one gamma is required"));
        }
        if let Some(g) = self.gammas.iter().find(|g| !(g.is_finite() && **g >= 1.0)) {
            return Err(LusError::invalid(format!("gamma must be >= 1, got {g}")));
        }
        if !(self.pilot_fraction > 0.0 && self.pilot_fraction <= 1.0) {
            return Err(LusError::invalid(format!(
                "pilot_fraction must be in (0,1], got {}",
                self.pilot_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub full: f64,
    pub lus: f64,
    pub us: f64,
    pub cc: f64,
}

/// Replication statistics at one γ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub gamma: f64,
    /// Replications that entered the statistics.
    pub reps: usize,
    /// Replications dropped because some fit was degenerate.
    pub excluded: usize,
    /// Kept fits at this γ (full, LUS, US or CC) that stopped at the
    /// iteration cap, typically because a small subsample is separable.
    pub nonconverged: usize,
    /// Per-coordinate `Var(θ̂_LUS) / Var(θ̂_full)`.
    pub tau: Vec<f64>,
    pub mean_tau: f64,
    pub tau_us: Vec<f64>,
    pub mean_tau_us: f64,
    pub tau_cc: Vec<f64>,
    pub mean_tau_cc: f64,
    /// Mean realised LUS subsample size over `n`.
    pub subsample_fraction: f64,
    /// LUS expected fraction under the pilot, used as the US/CC budget.
    pub budget_fraction: f64,
    pub accuracy: Accuracy,
    /// Replication variances of the full-data and LUS estimates.
    pub var_full: Vec<f64>,
    pub var_lus: Vec<f64>,
}

#[derive(Debug)]
struct GammaOutcome {
    lus: FitResult,
    us: FitResult,
    cc: FitResult,
    lus_fraction: f64,
    acc: [f64; 3],
}

#[derive(Debug)]
struct RepOutcome {
    full: FitResult,
    acc_full: f64,
    per_gamma: Vec<GammaOutcome>,
}

fn tag(what: impl std::fmt::Display) -> impl FnOnce(LusError) -> LusError {
    move |e| match e {
        LusError::DegenerateFit(m) => LusError::DegenerateFit(format!("{what}: {m}")),
        e => e,
    }
}

fn sample_variances(samples: &[&[f64]]) -> Vec<f64> {
    let m = samples.len() as f64;
    let p = samples[0].len();
    (0..p)
        .map(|j| {
            let mean = samples.iter().map(|s| s[j]).sum::<f64>() / m;
            samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / (m - 1.0)
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Everything that stays fixed across replications.
pub struct Harness {
    pub config: ReplicationConfig,
    pub pilot: ModelParams,
    pub test: Dataset,
    /// LUS expected fraction per γ, from the pilot on the test set.
    pub budget_fractions: Vec<f64>,
}

impl Harness {
    pub fn new(config: ReplicationConfig) -> Result<Self> {
        config.validate()?;
        let pilot_pop = generate(
            &config.spec,
            config.n,
            rng::derive_seed(config.seed, "pilot-data"),
        )?;
        let pilot = train_pilot(
            &pilot_pop,
            config.pilot_fraction,
            rng::derive_seed(config.seed, "pilot"),
        )?;
        let test = generate(
            &config.spec,
            config.n_test,
            rng::derive_seed(config.seed, "test"),
        )?;
        let test_probs = PilotProbs::from_model(&pilot, &test)?;
        let budget_fractions = config
            .gammas
            .iter()
            .map(|&g| {
                asymptotics::expected_subsample_size(&test_probs, g)
                    .map(|s| s / test.len() as f64)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            pilot,
            test,
            budget_fractions,
        })
    }

    fn replicate(&self, rep: usize) -> Result<RepOutcome> {
        let cfg = &self.config;
        let r = rep as u64;
        let data = generate(
            &cfg.spec,
            cfg.n,
            rng::derive_indexed(rng::derive_seed(cfg.seed, "data"), r),
        )?;
        let full = fit_mle(&data, &cfg.solver).map_err(tag("full fit"))?;
        let acc_full = model::accuracy(&full.params, &self.test)?;
        let probs = PilotProbs::from_model(&self.pilot, &data)?;
        let lus_seed = rng::derive_indexed(rng::derive_seed(cfg.seed, "lus"), r);
        let us_seed = rng::derive_indexed(rng::derive_seed(cfg.seed, "us"), r);
        let cc_seed = rng::derive_indexed(rng::derive_seed(cfg.seed, "cc"), r);

        let mut per_gamma = Vec::with_capacity(cfg.gammas.len());
        for (gi, (&gamma, &frac)) in cfg.gammas.iter().zip(&self.budget_fractions).enumerate() {
            let g = gi as u64;
            let lus_plan = AcceptancePlan::lus(&probs, gamma)?;
            let lus_sub = draw_subsample(&data, &lus_plan, rng::derive_indexed(lus_seed, g))?;
            let lus_fraction = lus_sub.fraction();
            let lus = fit_subsample_mle(&lus_sub, &cfg.solver)
                .map_err(tag(format!("LUS fit at gamma {gamma}")))?;
            drop(lus_plan);

            let us_plan = AcceptancePlan::uniform(data.len(), data.classes(), 1.0 / frac)?;
            let us_sub = draw_subsample(&data, &us_plan, rng::derive_indexed(us_seed, g))?;
            let us = fit_subsample_mle(&us_sub, &cfg.solver)
                .map_err(tag(format!("US fit at gamma {gamma}")))?;

            let budget = ((frac * data.len() as f64).round() as usize).clamp(1, data.len());
            let cc_plan = AcceptancePlan::case_control(&data, budget)?;
            let cc_sub = draw_subsample(&data, &cc_plan, rng::derive_indexed(cc_seed, g))?;
            let cc = fit_subsample_mle(&cc_sub, &cfg.solver)
                .map_err(tag(format!("CC fit at gamma {gamma}")))?;

            let acc = [
                model::accuracy(&lus.params, &self.test)?,
                model::accuracy(&us.params, &self.test)?,
                model::accuracy(&cc.params, &self.test)?,
            ];
            per_gamma.push(GammaOutcome {
                lus,
                us,
                cc,
                lus_fraction,
                acc,
            });
        }
        Ok(RepOutcome {
            full,
            acc_full,
            per_gamma,
        })
    }

    /// Runs all replications and reduces them per γ, in replication order.
    pub fn run(&self) -> Result<Vec<ReplicationReport>> {
        let cfg = &self.config;
        let outcomes = par::map_indices(cfg.reps, |r| self.replicate(r));
        let mut kept = Vec::with_capacity(outcomes.len());
        let mut excluded = 0;
        let mut first = None;
        for (r, o) in outcomes.into_iter().enumerate() {
            match o {
                Ok(v) => kept.push(v),
                Err(LusError::DegenerateFit(msg)) => {
                    excluded += 1;
                    first.get_or_insert(format!("rep {r}: {msg}"));
                }
                Err(e) => return Err(e),
            }
        }
        // More than 5% degenerate replications fails the experiment.
        if excluded * 20 > cfg.reps || kept.len() < 2 {
            return Err(LusError::QualityGate {
                excluded,
                reps: cfg.reps,
                first: first.unwrap_or_else(|| "none".into()),
            });
        }

        let full: Vec<&[f64]> = kept.iter().map(|o| o.full.params.as_slice()).collect();
        let var_full = sample_variances(&full);
        let acc_full = mean(&kept.iter().map(|o| o.acc_full).collect::<Vec<_>>());
        let ratio = |v: Vec<f64>| -> Vec<f64> {
            v.iter().zip(&var_full).map(|(a, b)| a / b).collect()
        };

        let mut reports = Vec::with_capacity(cfg.gammas.len());
        for (gi, &gamma) in cfg.gammas.iter().enumerate() {
            let pick = |f: fn(&GammaOutcome) -> &FitResult| -> Vec<&[f64]> {
                kept.iter()
                    .map(|o| f(&o.per_gamma[gi]).params.as_slice())
                    .collect()
            };
            let var_lus = sample_variances(&pick(|g| &g.lus));
            let tau = ratio(var_lus.clone());
            let tau_us = ratio(sample_variances(&pick(|g| &g.us)));
            let tau_cc = ratio(sample_variances(&pick(|g| &g.cc)));
            let col = |f: fn(&GammaOutcome) -> f64| -> f64 {
                mean(&kept.iter().map(|o| f(&o.per_gamma[gi])).collect::<Vec<_>>())
            };
            reports.push(ReplicationReport {
                gamma,
                reps: kept.len(),
                excluded,
                nonconverged: kept
                    .iter()
                    .map(|o| {
                        let g = &o.per_gamma[gi];
                        [&o.full, &g.lus, &g.us, &g.cc]
                            .iter()
                            .filter(|f| !f.converged)
                            .count()
                    })
                    .sum(),
                mean_tau: mean(&tau),
                mean_tau_us: mean(&tau_us),
                mean_tau_cc: mean(&tau_cc),
                tau,
                tau_us,
                tau_cc,
                subsample_fraction: col(|g| g.lus_fraction),
                budget_fraction: self.budget_fractions[gi],
                accuracy: Accuracy {
                    full: acc_full,
                    lus: col(|g| g.acc[0]),
                    us: col(|g| g.acc[1]),
                    cc: col(|g| g.acc[2]),
                },
                var_full: var_full.clone(),
                var_lus,
            });
        }
        Ok(reports)
    }
}

/// Trains the frozen pilot, then replicates `reps` times. See [`Harness`].
pub fn run_replications(config: &ReplicationConfig) -> Result<Vec<ReplicationReport>> {
    Harness::new(config.clone())?.run()
}
