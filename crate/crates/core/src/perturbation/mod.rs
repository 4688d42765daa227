//! The drift operators `𝓕φ = ⟨Dφ, F⟩` and `𝓕_εφ = (φ∘η(ε,·) - φ)/ε`, the
//! approximating generators `N_ε = L + 𝓕_ε`, the map
//! `T_λψ = (1/ε) R(λ+1/ε, L)[ψ∘η(ε,·)]`, and the resolvent `R(λ, N_ε)`.

pub mod reduction;
pub mod solver;
pub mod spline;

use rand::Rng;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::fields::{coordinate_dirs, make_cylindrical, BuiltinProfile, ScalarField, VectorField};
use crate::flow;
use crate::linalg::{self, Vector};
use crate::model::OperatorModel;
use crate::ou::{self, GaussNodes, HessianMode, QuadMode, QuadratureSpec, ResolventValue};
use crate::par;
use crate::report::{self, CheckReport};
use crate::rng;
use crate::sampler::SupSampler;

pub use reduction::Reduction;
pub use solver::{gradient_bound, iteration_bound, solve_resolvent_neps, ResolventSolution, SolverConfig};

pub const REF_FEPS: &str = "sup|𝓕_εφ - 𝓕φ| <= (θ_Dφ(‖F‖₀ε) + ‖Dφ‖₀Kε)‖F‖₀";
pub const REF_FEPS_MONOTONE: &str = "sup|𝓕_εφ - 𝓕φ| -> 0 as ε -> 0";
pub const REF_CONTRACTION: &str = "‖T_λψ₁ - T_λψ₂‖ <= ‖ψ₁ - ψ₂‖/(1+λε)";
pub const REF_FIXED_POINT: &str = "φ_ε = R(λ+1/ε,L)f + T_λφ_ε";
pub const REF_ITERATIONS: &str = "Picard iterations <= ceil(ln(tol/‖f‖)/ln(1/(1+λε))) + 5";
pub const REF_DISSIPATIVITY: &str = "λ‖R(λ,N_ε)f‖ <= ‖f‖";
pub const REF_GRADIENT: &str = "‖Dφ_ε‖₀ <= ‖Df‖₀/(λ - ω - (e^{Kε}-1)/ε)";
pub const REF_DT: &str = "‖DT_λψ‖₀ <= e^{εK}/(1+ε(λ-ω))·‖Dψ‖₀";
pub const REF_RESIDUAL: &str = "λφ_ε - Lφ_ε - 𝓕_εφ_ε = f";
pub const REF_N0_DISSIPATIVE: &str = "‖λφ - N₀φ‖ >= λ‖φ‖ - ‖𝓕_εφ - 𝓕φ‖";
pub const REF_EPS_RESIDUAL: &str =
    "|λφ_ε - N₀φ_ε - f| <= c₁‖F‖₀θ_Df(‖F‖₀ε) + c₁‖Df‖₀K‖F‖₀ε, c₁ = 1/(λ-ω-(e^{Kε}-1)/ε)";
pub const REF_EPS_RESIDUAL_STATED: &str =
    "|λφ_ε - N₀φ_ε - f| <= c₁‖F‖₀θ_Df(‖F‖₀ε) + c₁‖Df‖₀K‖F‖₀ε, c₁ = 1/(λ-ω-Ke^K) (stated form)";
pub const REF_EPS_MONOTONE: &str = "|λφ_ε - N₀φ_ε - f| decreases as ε -> 0";
pub const REF_ZERO_DRIFT: &str = "F = 0: R(λ,N_ε)f = R(λ,L)f";

fn flow_tol(eps: f64) -> f64 {
    eps * 1e-8
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    Ok(())
}

/// `𝓕φ(x) = ⟨Dφ(x), F(x)⟩`.
pub fn apply_fcal(phi: &ScalarField, field: &VectorField, x: &Vector) -> Result<f64> {
    let g = phi.gradient(x.as_slice())?;
    Ok(g.dot(&field.value(x.as_slice())))
}

/// `𝓕_εφ(x) = (φ(η(ε,x)) - φ(x))/ε`.
pub fn apply_feps(phi: &ScalarField, field: &VectorField, eps: f64, x: &Vector) -> Result<f64> {
    check_eps(eps)?;
    if field.is_zero() {
        return Ok(0.0);
    }
    let mut eta = vec![0.0; x.len()];
    flow::flow_into(field, x.as_slice(), eps, flow_tol(eps), &mut eta)?;
    Ok((phi.value(&eta) - phi.value(x.as_slice())) / eps)
}

/// `N_εφ(x) = Lφ(x) + 𝓕_εφ(x)`.
pub fn apply_neps(
    model: &OperatorModel,
    phi: &ScalarField,
    field: &VectorField,
    eps: f64,
    x: &Vector,
    mode: HessianMode,
) -> Result<f64> {
    Ok(ou::apply_l(model, phi, x, mode)? + apply_feps(phi, field, eps, x)?)
}

/// One report per `ε`: sup over the sampler of `|𝓕_εφ - 𝓕φ|` against
/// `(θ_Dφ(‖F‖₀ε) + ‖Dφ‖₀Kε)‖F‖₀`, plus a monotonicity report.
pub fn check_feps_convergence(
    phi: &ScalarField,
    field: &VectorField,
    eps_list: &[f64],
    sampler: &SupSampler,
) -> Result<Vec<CheckReport>> {
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("eps values must be strictly decreasing".into()));
    }
    for &e in eps_list {
        check_eps(e)?;
    }
    let df = phi.grad_sup_norm.ok_or(Error::MissingOracle("gradient sup norm"))?;
    let theta = phi.grad_modulus.ok_or(Error::MissingOracle("gradient modulus"))?;
    let pts = sampler.points(phi.dim)?;
    let fcal: Vec<f64> = par::map_slice(&pts, |x| apply_fcal(phi, field, x))
        .into_iter()
        .collect::<Result<_>>()?;
    let f0 = field.f_sup_norm;
    let k = field.k_const;
    let mut reports = Vec::new();
    let mut errors = Vec::new();
    for &eps in eps_list {
        let diffs: Vec<f64> = par::map_range(pts.len(), |i| {
            apply_feps(phi, field, eps, &pts[i]).map(|v| (v - fcal[i]).abs())
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let lhs = diffs.into_iter().fold(0.0, f64::max);
        let rhs = (theta.eval(f0 * eps) + df * k * eps) * f0;
        let budget = 2.0 * df * flow_tol(eps) / eps + 1e-14;
        errors.push((lhs, budget));
        reports.push(
            CheckReport::new(format!("perturbation.feps_convergence[eps={eps}]"), REF_FEPS, lhs, rhs, budget)
                .param("eps", eps)
                .param("phi", phi.label.clone())
                .param("drift", field.name.clone())
                .sampler(sampler),
        );
    }
    let (increase, budget) = errors
        .windows(2)
        .map(|w| (w[1].0 - w[0].0, w[0].1 + w[1].1))
        .fold((f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a });
    if errors.len() >= 2 {
        reports.push(
            CheckReport::new("perturbation.feps_monotone", REF_FEPS_MONOTONE, increase, 0.0, budget)
                .param("eps", eps_list.to_vec())
                .sampler(sampler),
        );
    }
    Ok(reports)
}

/// Quadrature points of `N(e^{tA}x, Q_t)` for every Laplace node, either on
/// an invariant subspace or in the full space.
fn tlambda_points(
    model: &OperatorModel,
    field: &VectorField,
    psis: &[ScalarField],
    lambda: f64,
    eps: f64,
    x: &Vector,
    quad: &QuadratureSpec,
) -> Result<(Vec<(f64, Vec<Vector>, Vec<f64>)>, f64)> {
    let mu = lambda + 1.0 / eps;
    let rule = quad.laplace_rule(mu);
    let basis = if psis.iter().all(|p| p.cylinder.is_some()) {
        let cols: Vec<Vector> = psis
            .iter()
            .flat_map(|p| {
                let d = &p.cylinder.as_ref().expect("checked").dirs;
                (0..d.ncols()).map(|j| d.column(j).into_owned()).collect::<Vec<_>>()
            })
            .collect();
        let stacked = if cols.is_empty() {
            linalg::Matrix::zeros(model.dim, 0)
        } else {
            linalg::Matrix::from_columns(&cols)
        };
        let p = linalg::orthonormal_basis(&stacked, 1e-10);
        Reduction::is_invariant(model, field, &p)?.then_some(p)
    } else {
        None
    };
    let blocks = par::map_range(rule.len(), |j| -> Result<(f64, Vec<Vector>, Vec<f64>)> {
        let t = rule.nodes[j];
        let mean = model.semigroup_apply(t, x)?;
        let qt = model.covariance_matrix(t)?;
        let (pts, ws) = match (&basis, quad.mode) {
            (Some(p), QuadMode::Tensor) => {
                let cov = p.transpose() * &qt * p;
                let s = p.transpose() * &mean;
                let nodes = GaussNodes::centred(&cov, quad.nodes_per_dim)?;
                let pts = (0..nodes.len())
                    .map(|k| p * (&s + Vector::from_column_slice(nodes.point(k))))
                    .collect();
                (pts, nodes.weights)
            }
            (None, QuadMode::Tensor) => {
                let nodes = GaussNodes::centred(&qt, quad.nodes_per_dim)?;
                let pts = (0..nodes.len())
                    .map(|k| &mean + Vector::from_column_slice(nodes.point(k)))
                    .collect();
                (pts, nodes.weights)
            }
            (_, QuadMode::MonteCarlo) => {
                let law = model.covariance_at(t)?;
                let ys = law.sample(quad.mc_count, quad.seed.wrapping_add(j as u64))?;
                let w = 1.0 / ys.len() as f64;
                let n = ys.len();
                (ys.into_iter().map(|y| &mean + y).collect(), vec![w; n])
            }
        };
        Ok((rule.weights[j], pts, ws))
    });
    let blocks = blocks.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((blocks, rule.tail_bound))
}

/// `T_λψ_i(x)` for several `ψ_i` sharing one set of flowed quadrature points.
pub fn apply_tlambda_batch(
    model: &OperatorModel,
    field: &VectorField,
    lambda: f64,
    eps: f64,
    psis: &[ScalarField],
    x: &Vector,
    quad: &QuadratureSpec,
) -> Result<Vec<ResolventValue>> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    check_eps(eps)?;
    quad.validate()?;
    if psis.iter().any(|p| p.dim != model.dim) || x.len() != model.dim {
        return Err(Error::InvalidArgument("dimension mismatch".into()));
    }
    let (blocks, tail) = tlambda_points(model, field, psis, lambda, eps, x, quad)?;
    let tol = flow_tol(eps);
    let d = model.dim;
    let per_block = par::map_slice(&blocks, |(wt, pts, ws)| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; psis.len()];
        let mut eta = vec![0.0; d];
        for (y, w) in pts.iter().zip(ws) {
            flow::flow_into(field, y.as_slice(), eps, tol, &mut eta)?;
            for (a, psi) in acc.iter_mut().zip(psis) {
                *a += w * psi.value(&eta);
            }
        }
        Ok(acc.into_iter().map(|a| a * wt).collect())
    });
    let mut totals = vec![0.0; psis.len()];
    for b in per_block {
        for (t, v) in totals.iter_mut().zip(b?) {
            *t += v;
        }
    }
    Ok(totals
        .into_iter()
        .zip(psis)
        .map(|(v, psi)| ResolventValue {
            value: v / eps,
            error_budget: 2.0 * psi.sup_norm * tail / eps,
        })
        .collect())
}

/// `T_λψ(x) = (1/ε) ∫₀^∞ e^{-(λ+1/ε)t} ∫ ψ(η(ε, e^{tA}x + y)) N(0,Q_t)(dy) dt`.
pub fn apply_tlambda(
    model: &OperatorModel,
    field: &VectorField,
    lambda: f64,
    eps: f64,
    psi: &ScalarField,
    x: &Vector,
    quad: &QuadratureSpec,
) -> Result<ResolventValue> {
    Ok(apply_tlambda_batch(model, field, lambda, eps, std::slice::from_ref(psi), x, quad)?[0])
}

/// Random trigonometric test function along the first coordinate axis.
pub fn random_trig_field(dim: usize, seed: u64, index: u64) -> Result<ScalarField> {
    let mut r = rng::stream_rng(seed, index);
    let n = r.random_range(1..=3);
    let terms: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            [
                r.random_range(-1.0..1.0),
                r.random_range(0.2..2.0),
                r.random_range(0.0..std::f64::consts::TAU),
            ]
        })
        .collect();
    make_cylindrical(std::sync::Arc::new(BuiltinProfile::Trig { terms }), coordinate_dirs(dim, &[0]))
}

/// Settings for [`check_tlambda_contraction`].
#[derive(Debug, Clone)]
pub struct ContractionSpec {
    pub lambdas: Vec<f64>,
    pub eps_list: Vec<f64>,
    pub pairs: usize,
    pub points: usize,
    pub seed: u64,
}

/// Observed `sup|T_λψ₁ - T_λψ₂| / ‖ψ₁ - ψ₂‖_sample` against `1/(1+λε)`,
/// one report per `(λ, ε)` holding the worst pair.
pub fn check_tlambda_contraction(
    model: &OperatorModel,
    field: &VectorField,
    spec: &ContractionSpec,
    sampler: &SupSampler,
    quad: &QuadratureSpec,
) -> Result<Vec<CheckReport>> {
    let d = model.dim;
    let psis: Vec<ScalarField> = (0..2 * spec.pairs as u64)
        .map(|i| random_trig_field(d, spec.seed, i))
        .collect::<Result<_>>()?;
    let sample = sampler.points(d)?;
    let eval_pts: Vec<Vector> = sample.iter().take(spec.points.max(1)).cloned().collect();
    let norms: Vec<f64> = (0..spec.pairs)
        .map(|k| {
            sample
                .iter()
                .map(|x| (psis[2 * k].value(x.as_slice()) - psis[2 * k + 1].value(x.as_slice())).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let mut reports = Vec::new();
    for &lambda in &spec.lambdas {
        for &eps in &spec.eps_list {
            let q = 1.0 / (1.0 + lambda * eps);
            let mut sup = vec![0.0f64; spec.pairs];
            let mut budget = vec![0.0f64; spec.pairs];
            for x in &eval_pts {
                let vals = apply_tlambda_batch(model, field, lambda, eps, &psis, x, quad)?;
                for k in 0..spec.pairs {
                    let (a, b) = (vals[2 * k], vals[2 * k + 1]);
                    sup[k] = sup[k].max((a.value - b.value).abs());
                    budget[k] = budget[k].max(a.error_budget + b.error_budget);
                }
            }
            let per_pair: Vec<CheckReport> = (0..spec.pairs)
                .map(|k| {
                    let n = norms[k];
                    CheckReport::new(
                        "perturbation.tlambda_contraction",
                        REF_CONTRACTION,
                        sup[k] / n,
                        q,
                        1e-3 * q + budget[k] / n,
                    )
                    .param("pair", k)
                    .param("psi_diff_sample_norm", n)
                })
                .collect();
            if let Some(r) = report::worst(per_pair, &format!("perturbation.tlambda_contraction[lambda={lambda},eps={eps}]")) {
                reports.push(
                    r.param("lambda", lambda)
                        .param("eps", eps)
                        .param("points", eval_pts.len())
                        .seed(spec.seed)
                        .sampler(sampler),
                );
            }
        }
    }
    Ok(reports)
}

/// Values of `φ_ε` and the operators applied to it at one point.
#[derive(Debug, Clone, Copy)]
struct PointEval {
    phi: f64,
    f: f64,
    grad_norm: f64,
    l: f64,
    fcal: f64,
    feps: f64,
    fd_error: f64,
    /// `λφ - Lφ - 𝓕_εφ - f`.
    residual: f64,
}

fn evaluate_point(
    model: &OperatorModel,
    field: &VectorField,
    sol: &ResolventSolution,
    phi: &ScalarField,
    f: &ScalarField,
    x: &Vector,
    hessian_step: f64,
) -> Result<PointEval> {
    let xs = x.as_slice();
    let value = phi.value(xs);
    let grad = phi.gradient(xs)?;
    let l = ou::apply_l(model, phi, x, HessianMode::Oracle)?;
    let l_coarse = ou::apply_l(model, phi, x, HessianMode::FiniteDifference { step: 2.0 * hessian_step })?;
    let fx = field.value(xs);
    let fcal = grad.dot(&fx);
    let feps = apply_feps(phi, field, sol.eps, x)?;
    let fv = f.value(xs);
    Ok(PointEval {
        residual: sol.lambda * value - l - feps - fv,
        phi: value,
        f: fv,
        grad_norm: grad.norm(),
        l,
        fcal,
        feps,
        fd_error: (l - l_coarse).abs() + 1e-9 * (1.0 + fx.norm()),
    })
}

/// Per-solution reports; see [`check_resolvent_family`].
pub fn solution_reports(
    model: &OperatorModel,
    field: &VectorField,
    f: &ScalarField,
    sol: &ResolventSolution,
    points: &[Vector],
    cfg: &SolverConfig,
) -> Result<Vec<CheckReport>> {
    let (lambda, eps) = (sol.lambda, sol.eps);
    let evals = par::map_slice(points, |x| evaluate_point(model, field, sol, &sol.phi_eps, f, x, cfg.hessian_step))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let refined = par::map_slice(points, |x| {
        evaluate_point(model, field, sol, &sol.phi_refined, f, x, cfg.hessian_step)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let refinement_gap = evals
        .iter()
        .zip(&refined)
        .map(|(a, b)| (a.residual - b.residual).abs())
        .fold(0.0, f64::max);
    let max = |g: &dyn Fn(&PointEval) -> f64| evals.iter().map(g).fold(0.0, f64::max);
    let phi_sup = max(&|e| e.phi.abs());
    let f_sup = max(&|e| e.f.abs());
    let fd_error = max(&|e| e.fd_error);
    let quad_error = 2.0 * f.sup_norm * (1.0 + 1.0 / (lambda * eps)) * 1e-10;
    let budget = sol.identity_budget() + fd_error + quad_error + 2.0 * refinement_gap;
    let residual = max(&|e| e.residual.abs());
    let n0_residual = max(&|e| (lambda * e.phi - e.l - e.fcal - e.f).abs());
    let n0_image = max(&|e| (lambda * e.phi - e.l - e.fcal).abs());
    let drift_gap = max(&|e| (e.feps - e.fcal).abs());
    let grad_sup = max(&|e| e.grad_norm);
    let q = 1.0 / (1.0 + lambda * eps);
    let tag = |id: &str| format!("{id}[lambda={lambda},eps={eps}]");
    let mut out = vec![
        CheckReport::new(tag("perturbation.fixed_point_residual"), REF_FIXED_POINT, sol.residual_sup, sol.tol, 0.0),
        CheckReport::new(
            tag("perturbation.contraction_observed"),
            REF_CONTRACTION,
            sol.contraction_ratio_observed,
            q,
            1e-3,
        ),
        CheckReport::new(
            tag("perturbation.iteration_bound"),
            REF_ITERATIONS,
            sol.iterations as f64,
            sol.iteration_bound as f64,
            0.0,
        ),
        CheckReport::new(tag("perturbation.dissipativity"), REF_DISSIPATIVITY, lambda * phi_sup, f_sup, 1e-4 * f_sup),
        CheckReport::new(tag("perturbation.residual_identity"), REF_RESIDUAL, residual, 0.0, budget),
        CheckReport::new(
            tag("perturbation.n0_dissipativity"),
            REF_N0_DISSIPATIVE,
            lambda * phi_sup - n0_image,
            drift_gap,
            budget,
        ),
    ];
    let df = f.grad_sup_norm.unwrap_or(f64::INFINITY);
    if let Some(bound) = gradient_bound(model, field, lambda, eps, df) {
        out.push(CheckReport::new(tag("perturbation.gradient_bound"), REF_GRADIENT, grad_sup, bound, 1e-3 * bound));
        let c1 = bound / df;
        if let Some(theta) = f.grad_modulus {
            let f0 = field.f_sup_norm;
            let k = field.k_const;
            let rhs = |c: f64| c * f0 * theta.eval(f0 * eps) + c * df * k * f0 * eps;
            out.push(CheckReport::new(tag("perturbation.eps_residual"), REF_EPS_RESIDUAL, n0_residual, rhs(c1), budget));
            let stated = lambda - model.omega - k * k.exp();
            if stated > 0.0 {
                out.push(
                    CheckReport::new(
                        tag("perturbation.eps_residual_stated"),
                        REF_EPS_RESIDUAL_STATED,
                        n0_residual,
                        rhs(1.0 / stated),
                        budget,
                    )
                    .informational(),
                );
            }
        }
    }
    if field.is_zero() {
        let quad = QuadratureSpec::default();
        let gaps = par::map_slice(&points[..points.len().min(16)], |x| {
            ou::resolvent_l(model, f, lambda, x, &quad).map(|r| (sol.phi_eps.value(x.as_slice()) - r.value).abs())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        out.push(CheckReport::new(
            tag("perturbation.zero_drift_consistency"),
            REF_ZERO_DRIFT,
            gaps.into_iter().fold(0.0, f64::max),
            0.0,
            10.0 * sol.tol,
        ));
    }
    let points_len = points.len();
    Ok(out
        .into_iter()
        .map(|r| {
            r.param("lambda", lambda)
                .param("eps", eps)
                .param("iterations", sol.iterations)
                .param("points", points_len)
                .param("grid_radius", sol.grid_radius)
                .param("grid_nodes", sol.grid_nodes.len())
        })
        .collect())
}

/// `D T_λ f` by central differences against `e^{εK}/(1+ε(λ-ω))·‖Df‖₀`.
pub fn check_dtlambda_bound(
    model: &OperatorModel,
    field: &VectorField,
    f: &ScalarField,
    lambda: f64,
    eps: f64,
    points: &[Vector],
    quad: &QuadratureSpec,
) -> Result<CheckReport> {
    let h = 1e-4;
    let d = model.dim;
    let mut sup = 0.0f64;
    let mut budget = 0.0f64;
    for x in points {
        let mut g = Vector::zeros(d);
        for i in 0..d {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let p = apply_tlambda(model, field, lambda, eps, f, &xp, quad)?;
            let m = apply_tlambda(model, field, lambda, eps, f, &xm, quad)?;
            g[i] = (p.value - m.value) / (2.0 * h);
            budget = budget.max((p.error_budget + m.error_budget) / (2.0 * h));
        }
        sup = sup.max(g.norm());
    }
    let df = f.grad_sup_norm.ok_or(Error::MissingOracle("gradient sup norm"))?;
    let rhs = (eps * field.k_const).exp() / (1.0 + eps * (lambda - model.omega)) * df;
    Ok(CheckReport::new(
        format!("perturbation.dtlambda_bound[lambda={lambda},eps={eps}]"),
        REF_DT,
        sup,
        rhs,
        budget + 1e-6 * rhs,
    )
    .param("lambda", lambda)
    .param("eps", eps)
    .param("points", points.len())
    .informational())
}

/// Settings for [`check_resolvent_family`].
#[derive(Debug, Clone)]
pub struct FamilySpec {
    pub lambdas: Vec<f64>,
    pub eps_list: Vec<f64>,
    pub check_points: usize,
    pub dt_points: usize,
}

/// Solves `R(λ, N_ε)f` over the `(λ, ε)` grid and reports, aggregated to the
/// worst case over the grid per estimate: fixed-point residual, observed
/// contraction, iteration count, dissipativity, gradient bound, residual
/// identity, dissipativity of `N₀`, and the `ε -> 0` residual.
pub fn check_resolvent_family(
    model: &OperatorModel,
    field: &VectorField,
    f: &ScalarField,
    spec: &FamilySpec,
    cfg: &SolverConfig,
    sampler: &SupSampler,
) -> Result<Vec<CheckReport>> {
    let points = sampler.with_count(spec.check_points.max(1)).points(model.dim)?;
    let mut eps_sorted = spec.eps_list.clone();
    eps_sorted.sort_by(|a, b| b.total_cmp(a));
    let mut all = Vec::new();
    for &lambda in &spec.lambdas {
        let mut residuals = Vec::new();
        for &eps in &eps_sorted {
            let sol = solve_resolvent_neps(model, field, lambda, eps, f, cfg)?;
            let reports = solution_reports(model, field, f, &sol, &points, cfg)?;
            if let Some(r) = reports.iter().find(|r| r.check_id.starts_with("perturbation.eps_residual[")) {
                residuals.push((eps, r.lhs, r.error_budget));
            }
            all.extend(reports);
            if spec.dt_points > 0 {
                let quad = QuadratureSpec {
                    nodes_per_dim: 32,
                    laplace_nodes: 64,
                    ..QuadratureSpec::default()
                };
                all.push(check_dtlambda_bound(model, field, f, lambda, eps, &points[..spec.dt_points.min(points.len())], &quad)?);
            }
        }
        if residuals.len() >= 2 {
            let (inc, bud) = residuals
                .windows(2)
                .map(|w| (w[1].1 - w[0].1, w[0].2 + w[1].2))
                .fold((f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a });
            all.push(
                CheckReport::new(format!("perturbation.eps_residual_monotone[lambda={lambda}]"), REF_EPS_MONOTONE, inc, 0.0, bud)
                    .param("lambda", lambda)
                    .param("eps", Value::from(eps_sorted.clone())),
            );
        }
    }
    let mut groups: std::collections::BTreeMap<String, Vec<CheckReport>> = Default::default();
    for r in all {
        let base = r.check_id.split('[').next().unwrap_or("").to_string();
        groups.entry(base).or_default().push(r);
    }
    Ok(groups
        .into_iter()
        .filter_map(|(id, rs)| {
            let informational = rs.iter().all(|r| r.informational);
            report::worst(rs, &id).map(|mut r| {
                r.informational = informational;
                r.sampler(sampler)
            })
        })
        .collect())
}
