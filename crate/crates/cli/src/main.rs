//! `lus`: simulate data, draw subsamples, fit corrected MLEs and run
//! replication experiments.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 usage or validation
//! error, 3 degenerate fit, 4 experiment quality gate.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lus_core::sampling::Scheme;
use lus_core::simulate::SpecName;
use lus_core::LusError;

#[derive(Parser, Debug)]
#[command(name = "lus", version, about = "Local uncertainty sampling for multi-class logistic regression")]
struct Cli {
    /// Worker threads (defaults to the available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct SolverArgs {
    /// Gradient sup-norm tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long = "max-iters")]
    pub max_iters: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic Gaussian dataset.
    Simulate {
        #[arg(long, value_parser = parse_spec)]
        spec: SpecName,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "data.csv")]
        out: PathBuf,
    },
    /// Fit the plain MLE on a dataset, or the offset MLE on a subsample.
    Fit {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        subsample: Option<PathBuf>,
        /// Class count (defaults to the largest label).
        #[arg(long)]
        classes: Option<usize>,
        #[command(flatten)]
        solver: SolverArgs,
        /// Where to write the fit result JSON (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write the fitted parameters JSON.
        #[arg(long = "model-out")]
        model_out: Option<PathBuf>,
    },
    /// Draw a subsample under one acceptance scheme.
    Sample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = parse_scheme, default_value = "lus")]
        scheme: Scheme,
        #[arg(long)]
        gamma: f64,
        /// Pilot model JSON; when absent a pilot is trained on the input.
        #[arg(long)]
        pilot: Option<PathBuf>,
        #[arg(long = "pilot-fraction", default_value_t = 0.1)]
        pilot_fraction: f64,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "subsample.csv")]
        out: PathBuf,
        /// Also write the acceptance plan summary JSON.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Pilot, acceptance, subsample and corrected fit in one go.
    Pipeline {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        gamma: f64,
        #[arg(long, value_parser = parse_scheme, default_value = "lus")]
        scheme: Scheme,
        #[arg(long = "pilot-fraction", default_value_t = 0.1)]
        pilot_fraction: f64,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long = "out-dir", default_value = "out")]
        out_dir: PathBuf,
    },
    /// Plug-in asymptotic variance of a fitted model.
    Variance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, value_parser = parse_scheme, default_value = "lus")]
        scheme: Scheme,
        /// Pilot for LUS acceptance; defaults to the model itself.
        #[arg(long)]
        pilot: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replicated simulation experiment from a JSON config.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_spec)]
        spec: Option<SpecName>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long = "n-test")]
        n_test: Option<usize>,
        /// Comma-separated list, e.g. `1.5,2,3`.
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long = "pilot-fraction")]
        pilot_fraction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long = "out-dir", default_value = "experiment")]
        out_dir: PathBuf,
    },
}

fn parse_spec(s: &str) -> Result<SpecName, String> {
    s.parse().map_err(|e: LusError| e.to_string())
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    s.parse().map_err(|e: LusError| e.to_string())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<LusError>()) {
        Some(LusError::DegenerateFit(_)) => 3,
        Some(LusError::QualityGate { .. }) => 4,
        Some(
            LusError::InvalidArgument(_)
            | LusError::DimensionMismatch { .. }
            | LusError::Unsupported(_)
            | LusError::Parse { .. },
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be >= 1");
            return ExitCode::from(2);
        }
        lus_core::par::init_workers(jobs);
    }
    let result = match cli.command {
        Command::Simulate {
            spec,
            n,
            seed,
            out,
        } => commands::simulate(spec, n, seed, &out),
        Command::Fit {
            input,
            subsample,
            classes,
            solver,
            out,
            model_out,
        } => commands::fit(
            input.as_deref(),
            subsample.as_deref(),
            classes,
            &solver,
            out.as_deref(),
            model_out.as_deref(),
        ),
        Command::Sample {
            input,
            scheme,
            gamma,
            pilot,
            pilot_fraction,
            classes,
            seed,
            out,
            plan,
        } => commands::sample(commands::SampleArgs {
            input: &input,
            scheme,
            gamma,
            pilot: pilot.as_deref(),
            pilot_fraction,
            classes,
            seed,
            out: &out,
            plan: plan.as_deref(),
        }),
        Command::Pipeline {
            input,
            gamma,
            scheme,
            pilot_fraction,
            classes,
            seed,
            solver,
            out_dir,
        } => commands::pipeline(commands::PipelineArgs {
            input: &input,
            gamma,
            scheme,
            pilot_fraction,
            classes,
            seed,
            solver: &solver,
            out_dir: &out_dir,
        }),
        Command::Variance {
            model,
            data,
            gamma,
            scheme,
            pilot,
            out,
        } => commands::variance(&model, &data, gamma, scheme, pilot.as_deref(), out.as_deref()),
        Command::Experiment {
            config,
            spec,
            n,
            n_test,
            gammas,
            reps,
            pilot_fraction,
            seed,
            solver,
            out_dir,
        } => {
            let overrides = config::Overrides {
                spec,
                n,
                n_test,
                gammas,
                reps,
                pilot_fraction,
                seed,
                tol: solver.tol,
                max_iters: solver.max_iters,
            };
            commands::experiment(config.as_deref(), overrides, &out_dir)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
