use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use lus_core::asymptotics::{closed_form_variance, VarianceEstimate};
use lus_core::io;
use lus_core::rng::derive_seed;
use lus_core::sampling::{draw_subsample, AcceptancePlan, PlanSummary, Scheme};
use lus_core::simulate::{generate, run_replications, ReplicationReport, SpecName};
use lus_core::{
    fit_mle, fit_subsample_mle, train_pilot, Dataset, FitResult, LusError, ModelParams, PilotProbs,
    SolverConfig,
};

use crate::config::{ExperimentConfig, Overrides};
use crate::SolverArgs;

fn solver_config(args: &SolverArgs) -> Result<SolverConfig> {
    let mut c = SolverConfig::default();
    if let Some(t) = args.tol {
        c.tol = t;
    }
    if let Some(m) = args.max_iters {
        c.max_iters = m;
    }
    c.validate()?;
    Ok(c)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma.is_finite() && gamma >= 1.0) {
        return Err(LusError::invalid(format!("--gamma must be >= 1, got {gamma}")).into());
    }
    Ok(())
}

fn check_fraction(f: f64) -> Result<()> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(LusError::invalid(format!("--pilot-fraction must be in (0,1], got {f}")).into());
    }
    Ok(())
}

fn load_data(path: &Path, classes: Option<usize>) -> Result<Dataset> {
    io::load_dataset(path, classes).with_context(|| format!("reading {}", path.display()))
}

/// Turns a non-converged fit into a degenerate-fit error.
fn require_converged(fit: &FitResult, what: &str) -> Result<()> {
    if fit.converged {
        return Ok(());
    }
    Err(LusError::DegenerateFit(format!(
        "{what} did not converge after {} iterations (grad sup-norm {:e}); data may be separable",
        fit.iterations, fit.final_grad_norm
    ))
    .into())
}

fn plan_for(
    scheme: Scheme,
    data: &Dataset,
    gamma: f64,
    pilot: Option<&ModelParams>,
) -> Result<AcceptancePlan> {
    Ok(match scheme {
        Scheme::Lus => {
            let pilot = pilot.expect("LUS needs a pilot");
            AcceptancePlan::lus(&PilotProbs::from_model(pilot, data)?, gamma)?
        }
        Scheme::Uniform => AcceptancePlan::uniform(data.len(), data.classes(), gamma)?,
        Scheme::Cc => {
            let budget = (data.len() as f64 / gamma).round().max(1.0) as usize;
            AcceptancePlan::case_control(data, budget)?
        }
    })
}

pub fn simulate(spec: SpecName, n: usize, seed: u64, out: &Path) -> Result<()> {
    if n == 0 {
        return Err(LusError::invalid("--n must be >= 1").into());
    }
    let data = generate(&spec.spec(), n, derive_seed(seed, "data"))?;
    io::save_dataset(out, &data).with_context(|| format!("writing {}", out.display()))?;
    let counts = data.class_counts();
    println!("n={} K={} d={}", data.len(), data.classes(), data.dim());
    println!(
        "class counts: {}",
        counts
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    );
    Ok(())
}

pub fn fit(
    input: Option<&Path>,
    subsample: Option<&Path>,
    classes: Option<usize>,
    solver: &SolverArgs,
    out: Option<&Path>,
    model_out: Option<&Path>,
) -> Result<()> {
    let config = solver_config(solver)?;
    let fit = match (input, subsample) {
        (input, Some(sub_path)) => {
            let n_original = match input {
                Some(p) => load_data(p, classes)?.len(),
                None => usize::MAX,
            };
            let sub = io::load_subsample(sub_path, n_original, f64::NAN)
                .with_context(|| format!("reading {}", sub_path.display()))?;
            fit_subsample_mle(&sub, &config)?
        }
        (Some(p), None) => fit_mle(&load_data(p, classes)?, &config)?,
        (None, None) => {
            return Err(LusError::invalid("fit needs --input or --subsample").into());
        }
    };
    if let Some(path) = model_out {
        io::save_json(path, &fit.params)?;
    }
    match out {
        Some(path) => io::save_json(path, &fit)?,
        None => println!("{}", serde_json::to_string_pretty(&fit)?),
    }
    eprintln!(
        "converged={} iterations={} grad={:e}",
        fit.converged, fit.iterations, fit.final_grad_norm
    );
    require_converged(&fit, "fit")
}

pub struct SampleArgs<'a> {
    pub input: &'a Path,
    pub scheme: Scheme,
    pub gamma: f64,
    pub pilot: Option<&'a Path>,
    pub pilot_fraction: f64,
    pub classes: Option<usize>,
    pub seed: u64,
    pub out: &'a Path,
    pub plan: Option<&'a Path>,
}

pub fn sample(args: SampleArgs<'_>) -> Result<()> {
    check_gamma(args.gamma)?;
    check_fraction(args.pilot_fraction)?;
    let data = load_data(args.input, args.classes)?;
    let pilot = match (args.scheme, args.pilot) {
        (Scheme::Lus, Some(p)) => Some(io::load_json::<ModelParams>(p)?),
        (Scheme::Lus, None) => Some(train_pilot(
            &data,
            args.pilot_fraction,
            derive_seed(args.seed, "pilot"),
        )?),
        _ => None,
    };
    let plan = plan_for(args.scheme, &data, args.gamma, pilot.as_ref())?;
    let sub = draw_subsample(&data, &plan, derive_seed(args.seed, "sampling"))?;
    io::save_subsample(args.out, &sub)?;
    if let Some(path) = args.plan {
        io::save_json(path, &plan.summary(&data)?)?;
    }
    println!(
        "kept {} of {} points ({:.4})",
        sub.len(),
        data.len(),
        sub.fraction()
    );
    Ok(())
}

pub struct PipelineArgs<'a> {
    pub input: &'a Path,
    pub gamma: f64,
    pub scheme: Scheme,
    pub pilot_fraction: f64,
    pub classes: Option<usize>,
    pub seed: u64,
    pub solver: &'a SolverArgs,
    pub out_dir: &'a Path,
}

#[derive(Serialize)]
struct Metrics {
    n: usize,
    subsample_size: usize,
    subsample_fraction: f64,
    expected_fraction: f64,
    plan: PlanSummary,
    fit: Telemetry,
}

#[derive(Serialize)]
struct Telemetry {
    converged: bool,
    iterations: usize,
    final_grad_norm: f64,
    objective: f64,
}

pub fn pipeline(args: PipelineArgs<'_>) -> Result<()> {
    check_gamma(args.gamma)?;
    check_fraction(args.pilot_fraction)?;
    let config = solver_config(args.solver)?;
    let data = load_data(args.input, args.classes)?;
    fs::create_dir_all(args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;

    let pilot = match args.scheme {
        Scheme::Lus => {
            let p = train_pilot(&data, args.pilot_fraction, derive_seed(args.seed, "pilot"))?;
            io::save_json(args.out_dir.join("pilot.json"), &p)?;
            Some(p)
        }
        _ => None,
    };
    let plan = plan_for(args.scheme, &data, args.gamma, pilot.as_ref())?;
    let sub = draw_subsample(&data, &plan, derive_seed(args.seed, "sampling"))?;
    io::save_subsample(args.out_dir.join("subsample.csv"), &sub)?;
    let fit = fit_subsample_mle(&sub, &config)?;

    let summary = plan.summary(&data)?;
    let metrics = Metrics {
        n: data.len(),
        subsample_size: sub.len(),
        subsample_fraction: sub.fraction(),
        expected_fraction: summary.expected_size / data.len() as f64,
        plan: summary,
        fit: Telemetry {
            converged: fit.converged,
            iterations: fit.iterations,
            final_grad_norm: fit.final_grad_norm,
            objective: fit.objective,
        },
    };
    io::save_json(args.out_dir.join("metrics.json"), &metrics)?;
    require_converged(&fit, "subsample fit")?;
    io::save_json(args.out_dir.join("model.json"), &fit.params)?;
    println!(
        "scheme={} gamma={} kept {} of {} ({:.4}); fit converged in {} iterations",
        args.scheme,
        args.gamma,
        sub.len(),
        data.len(),
        sub.fraction(),
        fit.iterations
    );
    Ok(())
}

pub fn variance(
    model: &Path,
    data: &Path,
    gamma: Option<f64>,
    scheme: Scheme,
    pilot: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    if let Some(g) = gamma {
        check_gamma(g)?;
    }
    let params: ModelParams = io::load_json(model)?;
    let data = load_data(data, Some(params.classes()))?;
    let plan = match gamma {
        Some(g) => {
            let pilot = match pilot {
                Some(p) => io::load_json::<ModelParams>(p)?,
                None => params.clone(),
            };
            Some(plan_for(scheme, &data, g, Some(&pilot))?)
        }
        None => None,
    };
    let v: VarianceEstimate = closed_form_variance(&data, &params, plan.as_ref())?;
    match out {
        Some(path) => io::save_json(path, &v)?,
        None => println!("{}", serde_json::to_string_pretty(&v)?),
    }
    Ok(())
}

fn print_table(reports: &[ReplicationReport]) {
    println!(
        "{:>6} {:>9} {:>9} {:>9} {:>9} {:>8} {:>8} {:>8} {:>8}",
        "gamma", "tau_lus", "tau_us", "tau_cc", "nsub", "acc_full", "acc_lus", "acc_us", "acc_cc"
    );
    for r in reports {
        println!(
            "{:>6.2} {:>9.3} {:>9.3} {:>9.3} {:>9.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            r.gamma,
            r.mean_tau,
            r.mean_tau_us,
            r.mean_tau_cc,
            r.subsample_fraction,
            r.accuracy.full,
            r.accuracy.lus,
            r.accuracy.us,
            r.accuracy.cc
        );
    }
}

pub fn experiment(config: Option<&Path>, overrides: Overrides, out_dir: &Path) -> Result<()> {
    let base = match config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<ExperimentConfig>(&text)
                .map_err(|e| LusError::invalid(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    let cfg = base.apply(overrides);
    let rep = cfg.to_replication();
    rep.validate()?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let reports = run_replications(&rep)?;
    io::write_replication_summary(fs::File::create(out_dir.join("summary.csv"))?, &reports)?;
    io::write_replication_tau(fs::File::create(out_dir.join("tau.csv"))?, &reports)?;
    io::save_json(out_dir.join("reports.json"), &reports)?;
    io::save_json(out_dir.join("config.json"), &cfg)?;
    print_table(&reports);
    if let Some(r) = reports.first().filter(|r| r.excluded > 0) {
        eprintln!("warning: {} of {} replications excluded as degenerate", r.excluded, cfg.reps);
    }
    for r in reports.iter().filter(|r| r.nonconverged > 0) {
        eprintln!(
            "warning: gamma={}: {} fits stopped at the iteration cap",
            r.gamma, r.nonconverged
        );
    }
    Ok(())
}
