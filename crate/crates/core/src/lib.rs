//! Local uncertainty sampling (LUS) for multi-class logistic regression.
//!
//! The crate covers the whole estimation pipeline:
//!
//! * [`model`]: the reference-class logistic model with optional per-point
//!   logit offsets, its likelihood, gradient and Hessian.
//! * [`sampling`]: acceptance probabilities (uniform, case-control, LUS) and
//!   the one-pass Bernoulli subsampler.
//! * [`estimation`]: damped Newton fits of the plain and offset-corrected MLE,
//!   and pilot training.
//! * [`asymptotics`]: per-point information kernels, variance dominance and
//!   plug-in asymptotic variances.
//! * [`simulate`]: Gaussian populations with known ground truth and the
//!   replication harness.
//! * [`io`]: CSV and JSON formats shared with the command-line tool.
//!
//! Per-point work is spread over a rayon pool when the `parallel` feature is
//! enabled (the default). Reductions always run in a fixed block order, so
//! results are bit-identical with and without the feature.

pub mod asymptotics;
pub mod error;
pub mod estimation;
pub mod io;
pub mod model;
pub mod par;
pub mod rng;
pub mod sampling;
pub mod simulate;

pub use error::{LusError, Result};
pub use estimation::{fit_mle, fit_subsample_mle, train_pilot, FitResult, SolverConfig};
pub use model::{Dataset, LabeledPoint, ModelParams, OffsetVector, Offsets, ProbVector};
pub use sampling::{AcceptanceVector, PilotProbs, Scheme, Subsample, SubsampleEntry};
