use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ou_perturb::fields::{builtin_field, coordinate_dirs, make_cylindrical, BuiltinProfile, DriftConfig, PhiConfig};
use ou_perturb::flow;
use ou_perturb::harness::{convergence_study, Config, Study};
use ou_perturb::linalg::Vector;
use ou_perturb::model::{build_model, ModelConfig};
use ou_perturb::ou::{self, QuadratureSpec};
use ou_perturb::perturbation::{
    check_feps_convergence, check_resolvent_family, check_tlambda_contraction, solution_reports,
    solve_resolvent_neps, ContractionSpec, FamilySpec, SolverConfig,
};
use ou_perturb::report::CheckReport;
use ou_perturb::sampler::SupSampler;
use ou_perturb::sde::{closure_consistency, SdeParams};
use ou_perturb::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

fn failures(reports: &[CheckReport]) -> Vec<String> {
    reports
        .iter()
        .filter(|r| r.is_failure())
        .map(|r| format!("{} (lhs {:.3e}, rhs {:.3e}, budget {:.3e})", r.check_id, r.lhs, r.rhs, r.error_budget))
        .collect()
}

fn x1(v: f64) -> Vector {
    Vector::from_vec(vec![v])
}

fn closed_form() -> Result<Outcome> {
    let model = build_model(&ModelConfig::reference())?;
    let phi = PhiConfig::cos().build(1)?;
    let exact = (-(1.0 - (-2.0f64).exp()) / 4.0).exp();
    let tensor = ou::apply_rt(&model, &phi, 1.0, &x1(0.0), &QuadratureSpec::default())?;
    let mc = ou::apply_rt_estimate(&model, &phi, 1.0, &x1(0.0), &QuadratureSpec::monte_carlo(1_000_000, 7))?;
    let tensor_err = (tensor - exact).abs();
    let mc_err = (mc.value - exact).abs();
    outcome(
        tensor_err <= 1e-8 && mc_err <= 3.0 * mc.std_error,
        format!("tensor error {tensor_err:.2e}; MC error {mc_err:.2e} vs 3se {:.2e}", 3.0 * mc.std_error),
    )
}

fn flow_estimates() -> Result<Outcome> {
    let times = [0.1, 0.5, 1.0];
    let sampler = SupSampler::new(8.0, 84, 11);
    let mut configs = 0;
    let mut failed = Vec::new();
    for name in ["tanh_componentwise", "scaled_sigmoid_rank_one"] {
        for d in [1, 3] {
            let field = builtin_field(&DriftConfig::named(name, 1.0), d)?;
            let checks = flow::check_flow_estimates(&field, &sampler, &times, flow::DEFAULT_TOL)?;
            configs += times.len() * sampler.count;
            failed.extend(failures(&checks.reports).into_iter().map(|f| format!("{name} d={d}: {f}")));
        }
    }
    outcome(failed.is_empty(), format!("{configs} configurations; failures: {failed:?}"))
}

fn feps_convergence() -> Result<Outcome> {
    let cfg = Config::default();
    let eps = [0.4, 0.2, 0.1, 0.05, 0.025];
    let phi = cfg.phi.build(1)?;
    let field = builtin_field(&cfg.drift, 1)?;
    let reports = check_feps_convergence(&phi, &field, &eps, &cfg.sup_sampler)?;
    let table = convergence_study(&cfg, Study::Feps, &eps)?;
    let rate = table.fitted_rate.unwrap_or(f64::NAN);
    let failed = failures(&reports);
    outcome(
        failed.is_empty() && (rate - 1.0).abs() <= 0.15,
        format!("fitted rate {rate:.4}; errors {:?}; failures {failed:?}", table.errors),
    )
}

fn tlambda_contraction() -> Result<Outcome> {
    let model = build_model(&ModelConfig::reference())?;
    let field = builtin_field(&DriftConfig::named("tanh_componentwise", 1.0), 1)?;
    let spec = ContractionSpec {
        lambdas: vec![1.0, 2.0, 5.0],
        eps_list: vec![0.5, 0.1],
        pairs: 20,
        points: 16,
        seed: 3,
    };
    let reports = check_tlambda_contraction(&model, &field, &spec, &SupSampler::default(), &QuadratureSpec::default())?;
    let worst = reports.iter().map(|r| r.lhs - r.rhs).fold(f64::NEG_INFINITY, f64::max);
    outcome(
        reports.len() == 6 && reports.iter().all(|r| r.lhs <= r.rhs + 1e-3),
        format!("{} (lambda, eps) cells; worst ratio minus 1/(1+lambda eps) = {worst:.3e}", reports.len()),
    )
}

fn resolvent_fixed_point() -> Result<Outcome> {
    let model = build_model(&ModelConfig::reference())?;
    let tanh = builtin_field(&DriftConfig::named("tanh_componentwise", 1.0), 1)?;
    let zero = builtin_field(&DriftConfig::named("zero", 1.0), 1)?;
    let cos = PhiConfig::cos().build(1)?;
    let pts = SupSampler::new(8.0, 64, 0).points(1)?;
    let mut notes = Vec::new();
    let mut pass = true;

    let tight = SolverConfig::with_tol(1e-12);
    let lambda = 2.0;
    for arity in [0, 1] {
        let one = make_cylindrical(
            Arc::new(BuiltinProfile::Constant { value: 1.0, arity }),
            coordinate_dirs(1, &(0..arity).collect::<Vec<_>>()),
        )?;
        let sol = solve_resolvent_neps(&model, &tanh, lambda, 0.1, &one, &tight)?;
        let err = pts
            .iter()
            .map(|x| (sol.phi_eps.value(x.as_slice()) - 1.0 / lambda).abs())
            .fold(0.0, f64::max);
        pass &= err <= 1e-10;
        notes.push(format!("f=1 (grid dim {}): {err:.2e}", sol.reduced_dim));
    }

    let sol = solve_resolvent_neps(&model, &zero, lambda, 0.1, &cos, &SolverConfig::default())?;
    let quad = QuadratureSpec::default();
    let mut err: f64 = 0.0;
    for x in &pts[..16] {
        let r = ou::resolvent_l(&model, &cos, lambda, x, &quad)?;
        err = err.max((sol.phi_eps.value(x.as_slice()) - r.value).abs());
    }
    pass &= err <= 1e-5;
    notes.push(format!("F=0 vs R(lambda,L)f: {err:.2e}"));

    let start = Instant::now();
    let cfg = SolverConfig::default();
    let sol = solve_resolvent_neps(&model, &tanh, lambda, 0.1, &cos, &cfg)?;
    let reports = solution_reports(&model, &tanh, &cos, &sol, &pts, &cfg)?;
    let residual = reports.iter().find(|r| r.check_id.starts_with("perturbation.residual_identity")).expect("registered");
    pass &= residual.pass;
    notes.push(format!(
        "1-D residual {:.2e} <= {:.2e} ({:.1?})",
        residual.lhs,
        residual.error_budget,
        start.elapsed()
    ));

    let start = Instant::now();
    let model3 = build_model(&ModelConfig::diagonal(&[-1.0, -2.0, -3.0], &[1.0, 0.5, 0.25]))?;
    let tanh3 = builtin_field(&DriftConfig::named("tanh_componentwise", 1.0), 3)?;
    let cos3 = make_cylindrical(Arc::new(BuiltinProfile::Cos), coordinate_dirs(3, &[0]))?;
    let pts3 = SupSampler::new(8.0, 64, 0).points(3)?;
    let sol = solve_resolvent_neps(&model3, &tanh3, lambda, 0.1, &cos3, &cfg)?;
    let reports = solution_reports(&model3, &tanh3, &cos3, &sol, &pts3, &cfg)?;
    let residual = reports.iter().find(|r| r.check_id.starts_with("perturbation.residual_identity")).expect("registered");
    pass &= residual.pass;
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(600);
    notes.push(format!(
        "d=3 cylindrical (reduced to {}): residual {:.2e} <= {:.2e} ({elapsed:.1?})",
        sol.reduced_dim, residual.lhs, residual.error_budget
    ));
    outcome(pass, notes.join("; "))
}

fn dissipativity() -> Result<Outcome> {
    let model = build_model(&ModelConfig::reference())?;
    let tanh = builtin_field(&DriftConfig::named("tanh_componentwise", 1.0), 1)?;
    let cos = PhiConfig::cos().build(1)?;
    let spec = FamilySpec {
        lambdas: vec![1.0, 2.0, 5.0],
        eps_list: vec![0.5, 0.1, 0.02],
        check_points: 128,
        dt_points: 2,
    };
    let reports = check_resolvent_family(&model, &tanh, &cos, &spec, &SolverConfig::default(), &SupSampler::default())?;
    let pick = |id: &str| reports.iter().find(|r| r.check_id == id);
    let diss = pick("perturbation.dissipativity").expect("registered");
    let grad = pick("perturbation.gradient_bound");
    let pass = diss.pass && grad.is_none_or(|g| g.pass);
    outcome(
        pass,
        format!(
            "worst lambda|phi| = {:.4} vs |f| = {:.4}; gradient {}",
            diss.lhs,
            diss.rhs,
            grad.map_or("not applicable".to_string(), |g| format!(
                "{:.4} <= {:.4} over {} cells",
                g.lhs,
                g.rhs,
                g.params.get("aggregated_over").map_or("1".into(), |v| v.to_string())
            ))
        ),
    )
}

fn closure() -> Result<Outcome> {
    let model = build_model(&ModelConfig::reference())?;
    let tanh = builtin_field(&DriftConfig::named("tanh_componentwise", 1.0), 1)?;
    let cos = PhiConfig::cos().build(1)?;
    let params = SdeParams {
        dt: 1e-3,
        n_paths: 1_000_000,
        seed: 2024,
    };
    let grid: Vec<f64> = (0..9).map(|k| -2.0 + 0.5 * k as f64).collect();
    let study = closure_consistency(&model, &tanh, &cos, 2.0, &[0.4, 0.2, 0.1, 0.05], &grid, &params, &SolverConfig::default())?;
    let failed = failures(&study.reports);
    outcome(
        failed.is_empty(),
        format!(
            "distances {:?}; budget at smallest eps {:.3e}; failures {failed:?}",
            study.distances.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>(),
            study.budget
        ),
    )
}

fn determinism() -> Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let cfg_path = dir.path().join("suite.toml");
    std::fs::write(
        &cfg_path,
        "seed = 42\n[sde]\nn_paths = 20000\n[suite]\ncontraction_pairs = 6\nclosure_paths = 20000\n",
    )?;
    let run = |threads: &str, name: &str| -> Result<Vec<u8>> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_ouperturb"))
            .args(["verify-all", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(&out)
            .env("OUPERTURB_THREADS", threads)
            .output()?;
        if !status.status.success() {
            eprintln!("{}", String::from_utf8_lossy(&status.stdout));
        }
        Ok(std::fs::read(out)?)
    };
    let a = run("1", "a.json")?;
    let b = run("4", "b.json")?;
    outcome(!a.is_empty() && a == b, format!("{} bytes, identical: {}", a.len(), a == b))
}

type Criterion = (&'static str, fn() -> Result<Outcome>, Duration);

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 OU closed form", closed_form, Duration::from_secs(5)),
        ("2 flow estimates", flow_estimates, Duration::from_secs(30)),
        ("3 F_eps convergence", feps_convergence, Duration::from_secs(60)),
        ("4 T_lambda contraction", tlambda_contraction, Duration::from_secs(60)),
        ("5 resolvent fixed point", resolvent_fixed_point, Duration::from_secs(720)),
        ("6 dissipativity", dissipativity, Duration::from_secs(600)),
        ("7 closure consistency", closure, Duration::from_secs(900)),
        ("8 determinism", determinism, Duration::from_secs(600)),
    ];
    let only = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut passed = 0;
    let mut ran = 0;
    for (name, run, limit) in criteria {
        if only.as_deref().is_some_and(|o| !name.contains(o)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && elapsed <= limit, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        passed += pass as usize;
        println!(
            "{} criterion {name} [{elapsed:.1?}, limit {limit:?}]: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!("{passed}/{ran} acceptance criteria passed");
}
