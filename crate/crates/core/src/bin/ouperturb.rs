use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ou_perturb::fields::{self, builtin_field, BuiltinProfile, DriftConfig, PhiConfig};
use ou_perturb::harness::{self, emit, Config, Format, Study};
use ou_perturb::linalg::Vector;
use ou_perturb::model::build_model;
use ou_perturb::ou::{self, QuadMode, QuadratureSpec};
use ou_perturb::perturbation::{solution_reports, solve_resolvent_neps};
use ou_perturb::report::{self, CheckReport};
use ou_perturb::sde::{self, ResolventMode, SdeParams};
use ou_perturb::{flow, par, Error, Result};

/// Perturbed Ornstein-Uhlenbeck generators: evaluation and estimate checks.
///
/// The worker count is taken from OUPERTURB_THREADS when set.
#[derive(Parser)]
#[command(name = "ouperturb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Checks the drift constants and the flow estimates.
    FlowCheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.5, 1.0])]
        times: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluates R_tφ(x) and R(λ,L)φ(x).
    OuEval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Quad::Tensor)]
        quad: Quad,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solves R(λ,N_ε)f by the fixed-point iteration and checks the solution.
    Resolvent {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        eps: f64,
        /// Profile of the right-hand side (cos, sin, soft_linear, ...).
        #[arg(long, default_value = "cos")]
        f: String,
        /// Built-in drift (zero, tanh_componentwise, scaled_sigmoid_rank_one, smooth_bump).
        #[arg(long, default_value = "tanh_componentwise")]
        drift: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo P_tφ(x) and R(λ,N)φ(x) from the SDE.
    SdeMc {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs every registered check; exits with 1 if any fails.
    VerifyAll {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Report file; `.csv` selects CSV, anything else JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulates an error against a parameter and fits its rate.
    Convergence {
        #[arg(long)]
        config: Option<PathBuf>,
        /// feps, resolvent-eps or sde-dt.
        #[arg(long)]
        study: Study,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Quad {
    Tensor,
    Mc,
}

fn load(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn point(x: &[f64], dim: usize) -> Result<Vector> {
    match x.len() {
        0 => Ok(Vector::zeros(dim)),
        n if n == dim => Ok(Vector::from_column_slice(x)),
        n => Err(Error::InvalidArgument(format!("--x has {n} entries, the model has {dim}"))),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, emit::to_stable_json(value)?)?;
    Ok(())
}

fn summarize(reports: &[CheckReport]) {
    for r in reports {
        let status = match (r.pass, r.informational) {
            (true, _) => "PASS",
            (false, true) => "INFO",
            (false, false) => "FAIL",
        };
        println!("{status} {} lhs={:.6e} rhs={:.6e} margin={:.6e}", r.check_id, r.lhs, r.rhs, r.margin);
    }
    let failed = reports.iter().filter(|r| r.is_failure()).count();
    println!("{} checks, {} failed", reports.len(), failed);
}

fn verdict(reports: &[CheckReport]) -> ExitCode {
    if harness::any_failure(reports) {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn flow_check(config: Option<&Path>, times: &[f64], out: &Path) -> Result<ExitCode> {
    let cfg = load(config)?;
    let field = builtin_field(&cfg.drift, cfg.model.dim)?;
    let mut reports = fields::check_vector_field(&field, &cfg.sup_sampler)?;
    let checks = flow::check_flow_estimates(&field, &cfg.sup_sampler, times, cfg.suite.flow_tol)?;
    let mut ids: Vec<String> = checks.reports.iter().map(|r| r.check_id.clone()).collect();
    ids.sort();
    ids.dedup();
    for id in ids {
        let group: Vec<CheckReport> = checks.reports.iter().filter(|r| r.check_id == id).cloned().collect();
        reports.extend(report::worst(group, &id));
    }
    reports.sort_by(|a, b| a.check_id.cmp(&b.check_id));
    emit::emit_report(&reports, Format::from_path(out), out)?;
    summarize(&reports);
    if checks.vacuous {
        println!("no flow configurations were checked");
    }
    Ok(verdict(&reports))
}

#[derive(Serialize)]
struct OuEval {
    x: Vec<f64>,
    quad: QuadratureSpec,
    t: Option<f64>,
    rt: Option<f64>,
    rt_std_error: Option<f64>,
    lambda: Option<f64>,
    resolvent: Option<f64>,
    resolvent_error_budget: Option<f64>,
}

fn ou_eval(config: Option<&Path>, t: Option<f64>, lambda: Option<f64>, x: &[f64], quad: Quad, out: &Path) -> Result<ExitCode> {
    let cfg = load(config)?;
    let model = build_model(&cfg.model)?;
    let phi = cfg.phi.build(model.dim)?;
    let x = point(x, model.dim)?;
    let spec = QuadratureSpec {
        mode: match quad {
            Quad::Tensor => QuadMode::Tensor,
            Quad::Mc => QuadMode::MonteCarlo,
        },
        ..cfg.quadrature.clone()
    };
    let rt = t.map(|t| ou::apply_rt_estimate(&model, &phi, t, &x, &spec)).transpose()?;
    let res = lambda.map(|l| ou::resolvent_l(&model, &phi, l, &x, &spec)).transpose()?;
    let result = OuEval {
        x: x.as_slice().to_vec(),
        quad: spec,
        t,
        rt: rt.map(|e| e.value),
        rt_std_error: rt.map(|e| e.std_error),
        lambda,
        resolvent: res.map(|r| r.value),
        resolvent_error_budget: res.map(|r| r.error_budget),
    };
    if let Some(v) = result.rt {
        println!("R_t phi(x) = {v:.16e}");
    }
    if let Some(v) = result.resolvent {
        println!("R(lambda,L) phi(x) = {v:.16e}");
    }
    write_json(&result, out)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct ResolventExport {
    lambda: f64,
    eps: f64,
    f: String,
    drift: String,
    iterations: usize,
    iteration_bound: usize,
    residual_sup: f64,
    contraction_ratio_observed: f64,
    trace: Vec<f64>,
    grid_radius: f64,
    reduced_dim: usize,
    interpolation_error: f64,
    fixed_point_error: f64,
    grid_nodes: Vec<Vec<f64>>,
    grid_values: Vec<f64>,
    checks: Vec<CheckReport>,
}

fn profile_named(name: &str) -> Result<BuiltinProfile> {
    serde_json::from_value(serde_json::json!({ "g": name }))
        .map_err(|e| Error::InvalidArgument(format!("--f {name}: {e}")))
}

fn resolvent(config: Option<&Path>, lambda: f64, eps: f64, f: &str, drift: &str, out: &Path) -> Result<ExitCode> {
    let cfg = load(config)?;
    let model = build_model(&cfg.model)?;
    let field = builtin_field(&DriftConfig { name: drift.into(), ..cfg.drift.clone() }, model.dim)?;
    let phi_cfg = PhiConfig {
        profile: profile_named(f)?,
        ..cfg.phi.clone()
    };
    let f_field = phi_cfg.build(model.dim)?;
    let sol = solve_resolvent_neps(&model, &field, lambda, eps, &f_field, &cfg.solver)?;
    let points = cfg.sup_sampler.with_count(cfg.suite.check_points.max(1)).points(model.dim)?;
    let checks = solution_reports(&model, &field, &f_field, &sol, &points, &cfg.solver)?;
    summarize(&checks);
    let export = ResolventExport {
        lambda,
        eps,
        f: f_field.label.clone(),
        drift: field.name.clone(),
        iterations: sol.iterations,
        iteration_bound: sol.iteration_bound,
        residual_sup: sol.residual_sup,
        contraction_ratio_observed: sol.contraction_ratio_observed,
        trace: sol.trace.clone(),
        grid_radius: sol.grid_radius,
        reduced_dim: sol.reduced_dim,
        interpolation_error: sol.interpolation_error,
        fixed_point_error: sol.fixed_point_error,
        grid_nodes: sol.grid_nodes.clone(),
        grid_values: sol.grid_values.clone(),
        checks,
    };
    write_json(&export, out)?;
    Ok(verdict(&export.checks))
}

#[derive(Serialize)]
struct SdeExport {
    x: Vec<f64>,
    params: SdeParams,
    transition: Option<sde::PathEstimate>,
    resolvent: Option<sde::ResolventMc>,
}

#[allow(clippy::too_many_arguments)]
fn sde_mc(
    config: Option<&Path>,
    t: Option<f64>,
    lambda: Option<f64>,
    dt: Option<f64>,
    paths: Option<usize>,
    seed: Option<u64>,
    x: &[f64],
    out: &Path,
) -> Result<ExitCode> {
    let cfg = load(config)?;
    let model = build_model(&cfg.model)?;
    let field = builtin_field(&cfg.drift, model.dim)?;
    let phi = cfg.phi.build(model.dim)?;
    let x = point(x, model.dim)?;
    let params = SdeParams {
        dt: dt.unwrap_or(cfg.sde.dt),
        n_paths: paths.unwrap_or(cfg.sde.n_paths),
        seed: seed.unwrap_or(cfg.sde.seed),
    };
    let transition = t.map(|t| sde::apply_pt(&model, &field, &phi, t, &x, &params)).transpose()?;
    let resolvent = lambda
        .map(|l| sde::resolvent_n_mc(&model, &field, &phi, l, &x, &params, ResolventMode::Clock))
        .transpose()?;
    if let Some(p) = &transition {
        println!("P_t phi(x) = {:.16e} +- {:.3e}", p.phi_mean, p.std_error);
    }
    if let Some(r) = &resolvent {
        println!("R(lambda,N) phi(x) = {:.16e} (error bar {:.3e})", r.value, r.error_bar);
    }
    write_json(
        &SdeExport {
            x: x.as_slice().to_vec(),
            params,
            transition,
            resolvent,
        },
        out,
    )?;
    Ok(ExitCode::SUCCESS)
}

fn verify_all(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<ExitCode> {
    let mut cfg = load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.quadrature.seed = s;
        cfg.sde.seed = s;
    }
    let reports = harness::run_suite(&cfg)?;
    emit::emit_report(&reports, Format::from_path(out), out)?;
    summarize(&reports);
    Ok(verdict(&reports))
}

fn convergence(config: Option<&Path>, study: Study, values: &[f64], out: &Path) -> Result<ExitCode> {
    let cfg = load(config)?;
    let table = harness::convergence_study(&cfg, study, values)?;
    for (v, e) in table.values.iter().zip(&table.errors) {
        println!("{} = {v:e}: error {e:.6e}", table.parameter);
    }
    match table.fitted_rate {
        Some(r) => println!("fitted rate {r:.4}"),
        None => println!("fitted rate undefined"),
    }
    for n in &table.notes {
        println!("note: {n}");
    }
    std::fs::write(out, table.to_csv()?)?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::FlowCheck { config, times, out } => flow_check(config.as_deref(), &times, &out),
        Command::OuEval {
            config,
            t,
            lambda,
            x,
            quad,
            out,
        } => ou_eval(config.as_deref(), t, lambda, &x, quad, &out),
        Command::Resolvent {
            config,
            lambda,
            eps,
            f,
            drift,
            out,
        } => resolvent(config.as_deref(), lambda, eps, &f, &drift, &out),
        Command::SdeMc {
            config,
            t,
            lambda,
            dt,
            paths,
            seed,
            x,
            out,
        } => sde_mc(config.as_deref(), t, lambda, dt, paths, seed, &x, &out),
        Command::VerifyAll { config, seed, out } => verify_all(config.as_deref(), seed, &out),
        Command::Convergence {
            config,
            study,
            values,
            out,
        } => convergence(config.as_deref(), study, &values, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    par::init_from_env();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
