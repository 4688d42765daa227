//! Verification suites, report files and convergence studies.

pub mod config;
pub mod convergence;
pub mod emit;

use std::sync::Arc;

use crate::fields::{self, builtin_field, ScalarField, VectorField};
use crate::flow;
use crate::linalg::{self, Vector};
use crate::model::{build_model, growth_grid, OperatorModel};
use crate::ou::{self, HessianMode, QuadMode, QuadratureSpec};
use crate::par;
use crate::perturbation::{self, ContractionSpec, FamilySpec};
use crate::report::{self, CheckReport};
use crate::sde::{self, SdeParams};
use crate::Result;

pub use config::{Config, SuiteSettings};
pub use convergence::{convergence_study, ConvergenceTable, Study};
pub use emit::{emit_report, Format};

pub const REF_GROWTH: &str = "‖e^{tA}‖ <= e^{ωt}";
pub const REF_SEMIGROUP: &str = "e^{(t+s)A} = e^{tA}e^{sA}";
pub const REF_COVARIANCE_FLOW: &str = "Q_{t+s} = Q_s + e^{sA}Q_t e^{sA*}";
pub const REF_TRACE_MONOTONE: &str = "t -> tr Q_t nondecreasing";
pub const REF_FACTOR: &str = "Q_t = CCᵀ for the sampling factor C";
pub const REF_RT_CONTRACTION: &str = "|R_tφ(x)| <= ‖φ‖₀";
pub const REF_RT_SEMIGROUP: &str = "R_{t+s}φ = R_t R_sφ";
pub const REF_RESOLVENT_CONTRACTION: &str = "λ|R(λ,L)φ(x)| <= ‖φ‖₀";
pub const REF_RESOLVENT_GRADIENT: &str = "|DR(λ,L)φ(x)| <= ‖Dφ‖₀/(λ-ω)";
pub const REF_GENERATOR: &str = "(R_hφ(x)-φ(x))/h -> Lφ(x) = ½tr(QD²φ(x)) + ⟨Ax,Dφ(x)⟩";
pub const REF_TENSOR_MC: &str = "R_tφ(x) = E φ(e^{tA}x + Y), Y ~ N(0,Q_t): quadrature and sampling agree";

type Job<'a> = Box<dyn Fn() -> Result<Vec<CheckReport>> + Send + Sync + 'a>;

/// Everything derived from a [`Config`] that the checks share.
struct Setup {
    cfg: Config,
    model: OperatorModel,
    field: VectorField,
    phi: ScalarField,
}

/// Runs every registered check of `cfg` and returns the reports sorted by
/// `check_id`. The run fails iff some non-informational report fails.
pub fn run_suite(cfg: &Config) -> Result<Vec<CheckReport>> {
    cfg.validate()?;
    let model = build_model(&cfg.model)?;
    let field = builtin_field(&cfg.drift, model.dim)?;
    let phi = cfg.phi.build(model.dim)?;
    let s = Setup {
        cfg: cfg.clone(),
        model,
        field,
        phi,
    };
    let s = &s;
    let mut jobs: Vec<Job> = vec![
        Box::new(move || model_checks(s)),
        Box::new(move || fields::check_scalar_field(&s.phi, &s.cfg.sup_sampler)),
        Box::new(move || fields::check_vector_field(&s.field, &s.cfg.sup_sampler)),
        Box::new(move || flow_checks(s)),
        Box::new(move || ou_checks(s)),
        Box::new(move || {
            let mut eps = s.cfg.suite.feps_eps.clone();
            eps.sort_by(|a, b| b.total_cmp(a));
            perturbation::check_feps_convergence(&s.phi, &s.field, &eps, &s.cfg.sup_sampler)
        }),
        Box::new(move || {
            let spec = ContractionSpec {
                lambdas: s.cfg.suite.contraction_lambdas.clone(),
                eps_list: s.cfg.suite.contraction_eps.clone(),
                pairs: s.cfg.suite.contraction_pairs,
                points: s.cfg.suite.contraction_points,
                seed: s.cfg.seed,
            };
            perturbation::check_tlambda_contraction(&s.model, &s.field, &spec, &s.cfg.sup_sampler, &s.cfg.quadrature)
        }),
        Box::new(move || {
            let spec = FamilySpec {
                lambdas: s.cfg.suite.lambdas.clone(),
                eps_list: s.cfg.suite.eps_list.clone(),
                check_points: s.cfg.suite.check_points,
                dt_points: s.cfg.suite.dt_points,
            };
            perturbation::check_resolvent_family(&s.model, &s.field, &s.phi, &spec, &s.cfg.solver, &s.cfg.sup_sampler)
        }),
        Box::new(move || sde_checks(s)),
    ];
    if cfg.suite.closure {
        jobs.push(Box::new(move || closure_checks(s)));
    }
    let mut reports = Vec::new();
    for r in par::map_slice(&jobs, |job| job()) {
        reports.extend(r?);
    }
    reports.sort_by(|a, b| a.check_id.cmp(&b.check_id));
    Ok(reports)
}

/// `true` when some non-informational report failed.
pub fn any_failure(reports: &[CheckReport]) -> bool {
    reports.iter().any(CheckReport::is_failure)
}

fn model_checks(s: &Setup) -> Result<Vec<CheckReport>> {
    let m = &s.model;
    let d = m.dim as f64;
    let mut growth: f64 = 0.0;
    for t in growth_grid() {
        growth = growth.max(linalg::op_norm(&m.exp_ta(t)?) * (-m.omega * t).exp());
    }
    let times = [0.1, 0.5, 1.0];
    let mut semigroup: f64 = 0.0;
    let mut cov_flow: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for &t in &times {
        for &u in &times {
            let lhs = m.exp_ta(t + u)?;
            semigroup = semigroup.max((&lhs - m.exp_ta(t)? * m.exp_ta(u)?).norm());
            let eu = m.exp_ta(u)?;
            let q = m.covariance_matrix(t + u)?;
            let rhs = m.covariance_matrix(u)? + &eu * m.covariance_matrix(t)? * eu.transpose();
            cov_flow = cov_flow.max((&q - rhs).norm());
            scale = scale.max(q.norm());
        }
    }
    let grid = growth_grid();
    let traces: Vec<f64> = grid
        .iter()
        .map(|&t| m.covariance_matrix(t).map(|q| q.trace()))
        .collect::<Result<_>>()?;
    let decrease = traces.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
    let law = m.covariance_at(1.0)?;
    let q1 = m.covariance_matrix(1.0)?;
    let factor_err = (&law.factor * law.factor.transpose() - &q1).norm();
    let eps = f64::EPSILON;
    Ok(vec![
        CheckReport::new("model.growth_bound", REF_GROWTH, growth, 1.0, 1e-9)
            .param("omega", m.omega)
            .param("times", grid.clone()),
        CheckReport::new("model.semigroup_law", REF_SEMIGROUP, semigroup, 0.0, 1e3 * eps * d)
            .param("times", times.to_vec()),
        CheckReport::new("model.covariance_flow", REF_COVARIANCE_FLOW, cov_flow, 0.0, 1e-10 * (1.0 + scale) * d)
            .param("times", times.to_vec()),
        CheckReport::new("model.covariance_trace_monotone", REF_TRACE_MONOTONE, decrease, 0.0, 1e3 * eps * d)
            .param("times", grid),
        CheckReport::new("model.gaussian_factor", REF_FACTOR, factor_err, 0.0, 1e-10 * (1.0 + q1.norm()))
            .param("t", 1.0),
    ])
}

fn flow_checks(s: &Setup) -> Result<Vec<CheckReport>> {
    let checks = flow::check_flow_estimates(&s.field, &s.cfg.sup_sampler, &s.cfg.suite.flow_times, s.cfg.suite.flow_tol)?;
    let mut ids: Vec<String> = checks.reports.iter().map(|r| r.check_id.clone()).collect();
    ids.sort();
    ids.dedup();
    let mut out = Vec::new();
    for id in ids {
        let group: Vec<CheckReport> = checks.reports.iter().filter(|r| r.check_id == id).cloned().collect();
        out.extend(report::worst(group, &id));
    }
    Ok(out)
}

/// `R_sφ` as a field on the whole space.
fn semigroup_field(model: &OperatorModel, phi: &ScalarField, s: f64, quad: &QuadratureSpec) -> ScalarField {
    let (m, p, q) = (model.clone(), phi.clone(), quad.clone());
    ScalarField::from_fns(
        model.dim,
        format!("R_{s}{}", phi.label),
        Arc::new(move |x| ou::apply_rt(&m, &p, s, &Vector::from_column_slice(x), &q).unwrap_or(f64::NAN)),
        None,
        phi.sup_norm,
    )
}

fn ou_checks(s: &Setup) -> Result<Vec<CheckReport>> {
    let (m, phi, quad) = (&s.model, &s.phi, &s.cfg.quadrature);
    let tensor = QuadratureSpec {
        mode: QuadMode::Tensor,
        ..quad.clone()
    };
    let pts = s.cfg.sup_sampler.with_count(s.cfg.suite.ou_points.max(1)).points(m.dim)?;
    let mut out = Vec::new();

    let mut worst: f64 = 0.0;
    for &t in &[0.1, 1.0] {
        for x in &pts {
            worst = worst.max(ou::apply_rt(m, phi, t, x, &tensor)?.abs());
        }
    }
    out.push(
        CheckReport::new("ou.rt_contraction", REF_RT_CONTRACTION, worst, phi.sup_norm, 1e-12)
            .param("phi", phi.label.clone())
            .param("t", vec![0.1, 1.0])
            .sampler(&s.cfg.sup_sampler),
    );

    let (t, u) = (0.3, 0.5);
    let inner = semigroup_field(m, phi, u, &tensor);
    let outer = QuadratureSpec {
        nodes_per_dim: if m.dim <= 2 { tensor.nodes_per_dim } else { 12 },
        ..tensor.clone()
    };
    let sg_pts = &pts[..pts.len().min(4)];
    let mut worst: f64 = 0.0;
    for x in sg_pts {
        let direct = ou::apply_rt(m, phi, t + u, x, &tensor)?;
        let composed = ou::apply_rt(m, &inner, t, x, &outer)?;
        worst = worst.max((direct - composed).abs());
    }
    out.push(
        CheckReport::new("ou.rt_semigroup", REF_RT_SEMIGROUP, worst, 0.0, 1e-8 * phi.sup_norm.max(1.0))
            .param("t", t)
            .param("s", u)
            .param("points", sg_pts.len()),
    );

    let mut contraction: (f64, f64, f64) = (f64::NEG_INFINITY, 0.0, 0.0);
    let mut gradient: Option<(f64, f64, f64)> = None;
    for &lambda in &s.cfg.suite.lambdas {
        if !(lambda > m.omega.max(0.0)) {
            continue;
        }
        let rule = tensor.laplace_rule(lambda);
        for x in &pts {
            let r = ou::resolvent_l(m, phi, lambda, x, &tensor)?;
            let lhs = lambda * r.value.abs();
            let budget = lambda * r.error_budget;
            if lhs - phi.sup_norm > contraction.0 - contraction.1 {
                contraction = (lhs, phi.sup_norm, budget);
            }
            if let Some(g) = phi.grad_sup_norm {
                let dr = ou::resolvent_dl(m, phi, lambda, x, &tensor)?;
                let lhs = dr.norm();
                let rhs = g / (lambda - m.omega) * (1.0 + 1e-4);
                let budget = 2.0 * g * rule.tail_bound;
                if gradient.is_none_or(|w| lhs - rhs > w.0 - w.1) {
                    gradient = Some((lhs, rhs, budget));
                }
            }
        }
    }
    if contraction.0.is_finite() {
        out.push(
            CheckReport::new(
                "ou.resolvent_contraction",
                REF_RESOLVENT_CONTRACTION,
                contraction.0,
                contraction.1,
                contraction.2,
            )
            .param("lambdas", s.cfg.suite.lambdas.clone())
            .sampler(&s.cfg.sup_sampler),
        );
    }
    if let Some((lhs, rhs, budget)) = gradient {
        out.push(
            CheckReport::new("ou.resolvent_gradient", REF_RESOLVENT_GRADIENT, lhs, rhs, budget)
                .param("lambdas", s.cfg.suite.lambdas.clone())
                .param("omega", m.omega)
                .sampler(&s.cfg.sup_sampler),
        );
    }

    let h = 1e-2;
    let mode = if phi.has_hessian() {
        HessianMode::Oracle
    } else {
        HessianMode::FiniteDifference {
            step: s.cfg.solver.hessian_step,
        }
    };
    let gen_pts = &pts[..pts.len().min(8)];
    let mut gen = (f64::NEG_INFINITY, 0.0);
    for x in gen_pts {
        let exact = ou::apply_l(m, phi, x, mode)?;
        let fine = ou::generator_difference_quotient(m, phi, x, h, &tensor)?;
        let coarse = ou::generator_difference_quotient(m, phi, x, 2.0 * h, &tensor)?;
        let err = (fine - exact).abs();
        let budget = (fine - coarse).abs() + 1e-13 * (1.0 + phi.sup_norm) / h;
        if err - budget > gen.0 - gen.1 {
            gen = (err, budget);
        }
    }
    out.push(
        CheckReport::new("ou.generator_consistency", REF_GENERATOR, gen.0, 0.0, gen.1)
            .param("h", h)
            .param("points", gen_pts.len()),
    );

    let mc = QuadratureSpec {
        mode: QuadMode::MonteCarlo,
        ..quad.clone()
    };
    let x0 = &pts[0];
    let exact = ou::apply_rt(m, phi, 1.0, x0, &tensor)?;
    let est = ou::apply_rt_estimate(m, phi, 1.0, x0, &mc)?;
    out.push(
        CheckReport::new("ou.tensor_vs_mc", REF_TENSOR_MC, (est.value - exact).abs(), 0.0, 3.0 * est.std_error)
            .param("t", 1.0)
            .param("x", x0.as_slice().to_vec())
            .param("mc_count", mc.mc_count)
            .seed(mc.seed),
    );
    Ok(out)
}

fn sde_point(s: &Setup) -> Vector {
    let mut x = Vector::zeros(s.model.dim);
    x[0] = s.cfg.suite.sde_x;
    x
}

fn sde_checks(s: &Setup) -> Result<Vec<CheckReport>> {
    let x = sde_point(s);
    let p = &s.cfg.sde;
    let t = s.cfg.suite.sde_t;
    Ok(vec![
        sde::check_mean_square_continuity(&s.model, &s.field, &x, t, &[0.2, 0.1, 0.05], p)?,
        sde::check_markov_property(
            &s.model,
            &s.field,
            &s.phi,
            &x,
            0.4 * t,
            0.6 * t,
            s.cfg.suite.markov_outer,
            s.cfg.suite.markov_inner,
            p,
        )?,
        sde::check_linear_consistency(&s.model, &s.phi, &x, t, p)?,
    ])
}

fn closure_checks(s: &Setup) -> Result<Vec<CheckReport>> {
    let params = SdeParams {
        n_paths: s.cfg.suite.closure_paths.unwrap_or(s.cfg.sde.n_paths),
        ..s.cfg.sde.clone()
    };
    let mut eps = s.cfg.suite.closure_eps.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    let study = sde::closure_consistency(
        &s.model,
        &s.field,
        &s.phi,
        s.cfg.suite.closure_lambda,
        &eps,
        &s.cfg.suite.closure_grid,
        &params,
        &s.cfg.solver,
    )?;
    Ok(study.reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::DriftConfig;

    fn quick() -> Config {
        let mut cfg = Config::default();
        cfg.sup_sampler.count = 256;
        cfg.quadrature.mc_count = 20_000;
        cfg.sde.n_paths = 4000;
        cfg.sde.dt = 0.01;
        cfg.suite.lambdas = vec![2.0];
        cfg.suite.eps_list = vec![0.5, 0.1];
        cfg.suite.contraction_lambdas = vec![2.0];
        cfg.suite.contraction_eps = vec![0.5];
        cfg.suite.contraction_pairs = 4;
        cfg.suite.contraction_points = 4;
        cfg.suite.check_points = 32;
        cfg.suite.markov_outer = 64;
        cfg.suite.markov_inner = 64;
        cfg.suite.closure = false;
        cfg
    }

    #[test]
    fn quick_suite_passes_and_is_sorted() {
        let reports = run_suite(&quick()).unwrap();
        for r in &reports {
            assert!(r.pass || r.informational, "{r:?}");
        }
        assert!(reports.windows(2).all(|w| w[0].check_id <= w[1].check_id));
        let ids: std::collections::BTreeSet<_> = reports.iter().map(|r| r.check_id.as_str()).collect();
        assert_eq!(ids.len(), reports.len());
        for prefix in ["model.", "field.", "flow.", "ou.", "perturbation.", "sde."] {
            assert!(ids.iter().any(|i| i.starts_with(prefix)), "{prefix}");
        }
    }

    #[test]
    fn zero_drift_suite_passes() {
        let mut cfg = quick();
        cfg.drift = DriftConfig::named("zero", 1.0);
        let reports = run_suite(&cfg).unwrap();
        assert!(!any_failure(&reports));
        assert!(reports.iter().any(|r| r.check_id.starts_with("perturbation.zero_drift")));
    }

    #[test]
    fn halved_lipschitz_constant_is_detected() {
        let mut cfg = quick();
        cfg.drift.k_override = Some(0.5);
        let reports = flow_checks(&Setup {
            model: build_model(&cfg.model).unwrap(),
            field: builtin_field(&cfg.drift, 1).unwrap(),
            phi: cfg.phi.build(1).unwrap(),
            cfg,
        })
        .unwrap();
        let lip = reports.iter().find(|r| r.check_id == "flow.lipschitz").unwrap();
        assert!(!lip.pass, "{lip:?}");
    }
}
