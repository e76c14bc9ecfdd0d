//! Experiment configuration file.
//!
//! ```json
//! {
//!   "spec": "marginal-imbalance",
//!   "n": 50000,
//!   "n_test": 100000,
//!   "gammas": [1.1, 1.2, 2.0, 3.0],
//!   "reps": 200,
//!   "pilot_fraction": 0.1,
//!   "seed": 0,
//!   "solver": { "tol": 1e-8, "max_iters": 100 }
//! }
//! ```
//!
//! Every field is optional; command-line flags override file values.

use serde::{Deserialize, Serialize};

use lus_core::simulate::{default_gammas, ReplicationConfig, SpecName};
use lus_core::SolverConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec: SpecName,
    pub n: usize,
    pub n_test: usize,
    pub gammas: Vec<f64>,
    pub reps: usize,
    pub pilot_fraction: f64,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            spec: SpecName::MarginalImbalance,
            n: 50_000,
            n_test: 100_000,
            gammas: default_gammas(),
            reps: 200,
            pilot_fraction: 0.1,
            seed: 0,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub spec: Option<SpecName>,
    pub n: Option<usize>,
    pub n_test: Option<usize>,
    pub gammas: Option<Vec<f64>>,
    pub reps: Option<usize>,
    pub pilot_fraction: Option<f64>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
}

impl ExperimentConfig {
    pub fn apply(mut self, o: Overrides) -> Self {
        if let Some(v) = o.spec {
            self.spec = v;
        }
        if let Some(v) = o.n {
            self.n = v;
        }
        if let Some(v) = o.n_test {
            self.n_test = v;
        }
        if let Some(v) = o.gammas {
            self.gammas = v;
        }
        if let Some(v) = o.reps {
            self.reps = v;
        }
        if let Some(v) = o.pilot_fraction {
            self.pilot_fraction = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.tol {
            self.solver.tol = v;
        }
        if let Some(v) = o.max_iters {
            self.solver.max_iters = v;
        }
        self
    }

    pub fn to_replication(&self) -> ReplicationConfig {
        ReplicationConfig {
            spec: self.spec.spec(),
            n: self.n,
            n_test: self.n_test,
            gammas: self.gammas.clone(),
            reps: self.reps,
            pilot_fraction: self.pilot_fraction,
            seed: self.seed,
            solver: self.solver.clone(),
        }
    }
}
