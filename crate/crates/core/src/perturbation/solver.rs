//! Fixed-point solver for `φ = R(λ+1/ε, L) f + T_λ φ` on a spline grid over
//! the reduced subspace.
//!
//! Grid values `v` are iterated as `v ← b + (1/ε) W_R S⁻¹ W_E S⁻¹ v`, where
//! `S⁻¹` maps values to spline coefficients, `W_E` evaluates a spline at the
//! flowed nodes `η(ε, s_j)`, and `W_R` applies the Laplace–Gauss–Hermite
//! quadrature of `R(λ+1/ε, L)` to a spline. The returned `φ_ε` is the
//! functional `b(x) + (1/ε) R(λ+1/ε, L)[spline of φ_ε∘η](x)`, defined at
//! every point.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{make_cylindrical, Modulus, Profile, ScalarField, VectorField};
use crate::linalg::{self, Matrix};
use crate::model::OperatorModel;
use crate::ou::GaussNodes;
use crate::par;
use crate::quadrature::LaplaceRule;

use super::reduction::Reduction;
use super::spline::{Grid, MAX_GRID_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Grid nodes per axis; 801 in one dimension and 61 in two by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_radius: Option<f64>,
    /// Radius of the region where the solution is to be accurate.
    #[serde(default = "default_domain_radius")]
    pub domain_radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gh_nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub laplace_nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default = "default_hessian_step")]
    pub hessian_step: f64,
}

fn default_tol() -> f64 {
    1e-6
}
fn default_domain_radius() -> f64 {
    8.0
}
fn default_fd_step() -> f64 {
    1e-4
}
fn default_hessian_step() -> f64 {
    1e-3
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            nodes: None,
            grid_radius: None,
            domain_radius: default_domain_radius(),
            gh_nodes: None,
            laplace_nodes: None,
            max_iterations: None,
            fd_step: default_fd_step(),
            hessian_step: default_hessian_step(),
        }
    }
}

impl SolverConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("solver.{what} must be positive")))
            }
        };
        positive(self.tol, "tol")?;
        positive(self.domain_radius, "domain_radius")?;
        positive(self.fd_step, "fd_step")?;
        positive(self.hessian_step, "hessian_step")?;
        if let Some(r) = self.grid_radius {
            positive(r, "grid_radius")?;
        }
        Ok(())
    }

    fn nodes_for(&self, m: usize) -> usize {
        self.nodes.unwrap_or(if m == 1 { 801 } else { 61 })
    }

    fn gh_for(&self, m: usize) -> usize {
        self.gh_nodes.unwrap_or(if m == 1 { 64 } else { 20 })
    }

    fn laplace_for(&self, m: usize) -> usize {
        self.laplace_nodes.unwrap_or(if m == 1 { 128 } else { 48 })
    }
}

/// `ceil(ln(tol/‖f‖)/ln(1/(1+λε))) + 5`.
pub fn iteration_bound(tol: f64, f_sup: f64, lambda: f64, eps: f64) -> usize {
    if f_sup <= tol {
        return 5;
    }
    let q = 1.0 / (1.0 + lambda * eps);
    ((tol / f_sup).ln() / q.ln()).ceil() as usize + 5
}

/// `R(μ,L)` quadrature over the reduced space: Laplace nodes in time, each
/// with the Gauss–Hermite nodes of `N(0, Q_t)` and the matrix `e^{tA}`.
#[derive(Debug)]
pub struct Transport {
    dim: usize,
    blocks: Vec<(Matrix, GaussNodes)>,
    /// Number of quadrature points per evaluation.
    pub size: usize,
    pub tail_bound: f64,
}

impl Transport {
    pub fn new(model: &OperatorModel, rule: &LaplaceRule, gh: usize) -> Result<Self> {
        let mut blocks = Vec::with_capacity(rule.len());
        for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
            let mut nodes = GaussNodes::centred(&model.covariance_matrix(t)?, gh)?;
            nodes.weights.iter_mut().for_each(|v| *v *= w);
            blocks.push((model.exp_ta(t)?, nodes));
        }
        let size = blocks.iter().map(|(_, n)| n.len()).sum();
        Ok(Self {
            dim: model.dim,
            blocks,
            size,
            tail_bound: rule.tail_bound,
        })
    }

    /// `Σ w · g(e^{tA}s + z)` over all quadrature points.
    pub fn integrate(&self, s: &[f64], mut g: impl FnMut(&[f64]) -> f64) -> f64 {
        let m = self.dim;
        let mut mean = [0.0; MAX_GRID_DIM];
        let mut y = [0.0; MAX_GRID_DIM];
        let mut acc = 0.0;
        for (e, nodes) in &self.blocks {
            for (i, mi) in mean.iter_mut().enumerate().take(m) {
                *mi = (0..m).map(|j| e[(i, j)] * s[j]).sum();
            }
            for k in 0..nodes.len() {
                let z = nodes.point(k);
                for i in 0..m {
                    y[i] = mean[i] + z[i];
                }
                acc += nodes.weights[k] * g(&y[..m]);
            }
        }
        acc
    }
}

/// The converged resolvent `φ_ε = R(λ, N_ε) f` with its diagnostics.
#[derive(Debug, Clone)]
pub struct ResolventSolution {
    pub phi_eps: ScalarField,
    /// `φ_ε` evaluated with twice the Laplace and Gauss-Hermite nodes on the
    /// same spline coefficients, for a posteriori quadrature error estimates.
    pub phi_refined: ScalarField,
    pub lambda: f64,
    pub eps: f64,
    pub iterations: usize,
    pub iteration_bound: usize,
    /// Sup over grid nodes of `|v - b - T v|` at the returned iterate.
    pub residual_sup: f64,
    pub contraction_ratio_observed: f64,
    /// Sup-norm of each fixed-point update.
    pub trace: Vec<f64>,
    pub grid_nodes: Vec<Vec<f64>>,
    pub grid_values: Vec<f64>,
    pub tol: f64,
    /// Sup distance, at cell midpoints inside the domain, between the
    /// functional and the spline through the grid values.
    pub interpolation_error: f64,
    /// `q/(1-q)` times the last update, `q = 1/(1+λε)`.
    pub fixed_point_error: f64,
    pub reduced_dim: usize,
    pub grid_radius: f64,
}

impl ResolventSolution {
    /// Error bound on `φ_ε`'s defining identities evaluated on the functional,
    /// before derivative and quadrature errors.
    pub fn identity_budget(&self) -> f64 {
        (3.0 * self.interpolation_error + 2.0 * self.residual_sup + self.fixed_point_error) / self.eps
    }
}

#[derive(Debug, Clone)]
struct SolvedProfile {
    arity: usize,
    transport: Arc<Transport>,
    grid: Grid,
    coeffs: Vec<f64>,
    source: ScalarField,
    basis: Matrix,
    inv_eps: f64,
    sup: f64,
    grad_sup: f64,
    fd_step: f64,
    hessian_step: f64,
}

impl SolvedProfile {
    fn source_at(&self, y: &[f64]) -> f64 {
        let d = self.basis.nrows();
        let mut x = [0.0; 16];
        if d <= 16 {
            for (i, xi) in x.iter_mut().enumerate().take(d) {
                *xi = (0..self.arity).map(|j| self.basis[(i, j)] * y[j]).sum();
            }
            self.source.value(&x[..d])
        } else {
            let v = &self.basis * crate::linalg::Vector::from_column_slice(y);
            self.source.value(v.as_slice())
        }
    }
}

impl Profile for SolvedProfile {
    fn arity(&self) -> usize {
        self.arity
    }

    fn value(&self, s: &[f64]) -> f64 {
        self.transport
            .integrate(s, |y| self.source_at(y) + self.inv_eps * self.grid.eval(&self.coeffs, y))
    }

    fn gradient(&self, s: &[f64], out: &mut [f64]) {
        let h = self.fd_step;
        let mut y = s.to_vec();
        for i in 0..self.arity {
            let si = y[i];
            y[i] = si + h;
            let p = self.value(&y);
            y[i] = si - h;
            let m = self.value(&y);
            y[i] = si;
            out[i] = (p - m) / (2.0 * h);
        }
    }

    fn hessian(&self, s: &[f64], out: &mut Matrix) -> bool {
        let h = self.hessian_step;
        let m = self.arity;
        let f0 = self.value(s);
        let mut y = s.to_vec();
        for i in 0..m {
            let si = y[i];
            y[i] = si + h;
            let p = self.value(&y);
            y[i] = si - h;
            let q = self.value(&y);
            y[i] = si;
            out[(i, i)] = (p - 2.0 * f0 + q) / (h * h);
            for j in 0..i {
                let sj = y[j];
                let mut corner = |a: f64, b: f64| {
                    y[i] = si + a * h;
                    y[j] = sj + b * h;
                    let v = self.value(&y);
                    y[i] = si;
                    y[j] = sj;
                    v
                };
                let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                    / (4.0 * h * h);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        true
    }

    fn sup_norm(&self) -> f64 {
        self.sup
    }

    fn grad_sup_norm(&self) -> f64 {
        self.grad_sup
    }

    fn grad_modulus(&self) -> Modulus {
        Modulus::capped_linear(f64::MAX, 2.0 * self.grad_sup)
    }
}

/// `‖Df‖₀ / (λ - ω - (e^{Kε}-1)/ε)` when the denominator is positive.
pub fn gradient_bound(model: &OperatorModel, field: &VectorField, lambda: f64, eps: f64, df_sup: f64) -> Option<f64> {
    let denom = lambda - model.omega - (field.k_const * eps).exp_m1() / eps;
    (denom > 0.0).then(|| df_sup / denom)
}

fn grid_radius(cfg: &SolverConfig, reduced: &OperatorModel, field: &VectorField, lambda: f64, eps: f64) -> Result<f64> {
    if let Some(r) = cfg.grid_radius {
        return Ok(r);
    }
    let horizon = ((1e10f64).ln() / lambda).min(50.0);
    let omega = reduced.omega;
    let (growth, drift_span) = if omega < 0.0 {
        (1.0, (1.0 / -omega).min(horizon))
    } else {
        ((omega * horizon).exp(), horizon)
    };
    let sigma = linalg::max_eigenvalue(&reduced.covariance_matrix(horizon)?).max(0.0).sqrt();
    Ok(cfg.domain_radius * growth + field.f_sup_norm * (drift_span + eps) + 7.0 * sigma)
}

fn check_inputs(model: &OperatorModel, field: &VectorField, f: &ScalarField, lambda: f64, eps: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    if f.dim != model.dim || field.dim() != model.dim {
        return Err(Error::InvalidArgument("dimension mismatch".into()));
    }
    Ok(())
}

/// Solves `φ_ε = R(λ+1/ε, L) f + T_λ φ_ε` by Picard iteration from
/// `φ⁰ = R(λ+1/ε, L) f`.
pub fn solve_resolvent_neps(
    model: &OperatorModel,
    field: &VectorField,
    lambda: f64,
    eps: f64,
    f: &ScalarField,
    cfg: &SolverConfig,
) -> Result<ResolventSolution> {
    check_inputs(model, field, f, lambda, eps)?;
    cfg.validate()?;
    let cyl = f.cylinder.as_ref().ok_or_else(|| {
        Error::InvalidField("the resolvent solver needs a cylindrical right-hand side".into())
    })?;
    let reduction = Reduction::new(model, field, &cyl.dirs, MAX_GRID_DIM)?;
    let bound = iteration_bound(cfg.tol, f.sup_norm, lambda, eps);
    let max_iter = cfg.max_iterations.unwrap_or(bound);
    let q = 1.0 / (1.0 + lambda * eps);
    let mu = lambda + 1.0 / eps;
    let df_sup = f.grad_sup_norm.unwrap_or(f64::INFINITY);
    let grad_sup = gradient_bound(model, field, lambda, eps, df_sup).unwrap_or(f64::INFINITY);
    let m = reduction.dim();

    let Some(reduced) = reduction.model.as_ref() else {
        let c = f.value(&vec![0.0; model.dim]);
        let rule = LaplaceRule::new(mu, None, cfg.laplace_for(1));
        let r1: f64 = rule.weights.iter().sum();
        let b = c * r1;
        let mut v = b;
        let mut trace = Vec::new();
        loop {
            let next = b + r1 / eps * v;
            let diff = (next - v).abs();
            trace.push(diff);
            v = next;
            if diff < cfg.tol {
                break;
            }
            if trace.len() >= max_iter {
                return Err(Error::NotConverged {
                    iterations: trace.len(),
                    last_update: diff,
                });
            }
        }
        let residual = (b + r1 / eps * v - v).abs();
        let mut phi = ScalarField::constant(model.dim, v);
        phi.label = format!("R(lambda,N_eps)[{}]", f.label);
        return Ok(ResolventSolution {
            phi_refined: phi.clone(),
            phi_eps: phi,
            lambda,
            eps,
            iterations: trace.len(),
            iteration_bound: bound,
            residual_sup: residual,
            contraction_ratio_observed: observed_ratio(&trace),
            trace,
            grid_nodes: vec![Vec::new()],
            grid_values: vec![v],
            tol: cfg.tol,
            interpolation_error: 0.0,
            fixed_point_error: residual * q / (1.0 - q),
            reduced_dim: 0,
            grid_radius: 0.0,
        });
    };

    let radius = grid_radius(cfg, reduced, field, lambda, eps)?;
    let grid = Grid::new(m, cfg.nodes_for(m), radius)?;
    let rule = LaplaceRule::new(mu, None, cfg.laplace_for(m));
    let transport = Arc::new(Transport::new(reduced, &rule, cfg.gh_for(m))?);
    let nodes = grid.nodes();
    let lift = |y: &[f64]| reduction.lift(y);
    let b: Vec<f64> = par::map_slice(&nodes, |s| transport.integrate(s, |y| f.value(lift(y).as_slice())));
    let flow_tol = (eps * 1e-8).min(1e-9);
    let flowed: Vec<Result<_>> = par::map_slice(&nodes, |s| {
        reduction
            .reduced_flow(field, s, eps, flow_tol)
            .map(|eta| grid.stencil(eta.as_slice()))
    });
    let flowed = flowed.into_iter().collect::<Result<Vec<_>>>()?;
    let ncoef = grid.coeff_count();
    let w_r: Vec<Vec<f64>> = par::map_slice(&nodes, |s| {
        let mut row = vec![0.0; ncoef];
        accumulate_row(&transport, &grid, s, &mut row);
        row
    });

    let apply = |v: &[f64]| -> Vec<f64> {
        let c = grid.interpolate(v);
        let g: Vec<f64> = flowed
            .iter()
            .map(|st| (0..st.len).map(|k| st.weight[k] * c[st.index[k]]).sum())
            .collect();
        let cg = grid.interpolate(&g);
        par::map_range(nodes.len(), |j| b[j] + linalg::dot(&w_r[j], &cg) / eps)
    };

    let mut v = b.clone();
    let mut trace = Vec::new();
    loop {
        let next = apply(&v);
        let diff = sup_diff(&next, &v);
        trace.push(diff);
        v = next;
        if diff < cfg.tol {
            break;
        }
        if trace.len() >= max_iter {
            return Err(Error::NotConverged {
                iterations: trace.len(),
                last_update: diff,
            });
        }
    }
    let coeffs = {
        let c = grid.interpolate(&v);
        let g: Vec<f64> = flowed
            .iter()
            .map(|st| (0..st.len).map(|k| st.weight[k] * c[st.index[k]]).sum())
            .collect();
        grid.interpolate(&g)
    };
    let next: Vec<f64> = par::map_range(nodes.len(), |j| b[j] + linalg::dot(&w_r[j], &coeffs) / eps);
    let residual = sup_diff(&next, &v);

    let profile = Arc::new(SolvedProfile {
        arity: m,
        transport: transport.clone(),
        grid: grid.clone(),
        coeffs,
        source: f.clone(),
        basis: reduction.basis.clone(),
        inv_eps: 1.0 / eps,
        sup: f.sup_norm / lambda,
        grad_sup,
        fd_step: cfg.fd_step,
        hessian_step: cfg.hessian_step,
    });
    let label = format!("R(lambda,N_eps)[{}]", f.label);
    let wrap = |p: Arc<SolvedProfile>| -> Result<ScalarField> {
        let mut phi = make_cylindrical(p, reduction.basis.clone())?;
        phi.label = label.clone();
        if !grad_sup.is_finite() {
            phi.grad_sup_norm = None;
        }
        phi.grad_modulus = None;
        Ok(phi)
    };
    let phi = wrap(profile.clone())?;
    let fine_rule = LaplaceRule::new(mu, None, 2 * cfg.laplace_for(m));
    let phi_refined = wrap(Arc::new(SolvedProfile {
        transport: Arc::new(Transport::new(reduced, &fine_rule, 2 * cfg.gh_for(m))?),
        ..(*profile).clone()
    }))?;

    let interpolation_error = {
        let vc = grid.interpolate(&next);
        let mids: Vec<Vec<f64>> = nodes
            .iter()
            .filter(|p| linalg::norm(p) <= cfg.domain_radius)
            .map(|p| p.iter().map(|c| c + 0.5 * grid.h).collect())
            .collect();
        let step = (mids.len() / 64).max(1);
        let picked: Vec<&Vec<f64>> = mids.iter().step_by(step).collect();
        par::map_slice(&picked, |p| (profile.value(p) - grid.eval(&vc, p)).abs())
            .into_iter()
            .fold(0.0, f64::max)
    };

    Ok(ResolventSolution {
        phi_eps: phi,
        phi_refined,
        lambda,
        eps,
        iterations: trace.len(),
        iteration_bound: bound,
        residual_sup: residual,
        contraction_ratio_observed: observed_ratio(&trace),
        trace,
        grid_nodes: nodes,
        grid_values: next,
        tol: cfg.tol,
        interpolation_error,
        fixed_point_error: residual * q / (1.0 - q),
        reduced_dim: m,
        grid_radius: radius,
    })
}

fn accumulate_row(transport: &Transport, grid: &Grid, s: &[f64], row: &mut [f64]) {
    let m = transport.dim;
    let mut mean = [0.0; MAX_GRID_DIM];
    let mut y = [0.0; MAX_GRID_DIM];
    for (e, nodes) in &transport.blocks {
        for (i, mi) in mean.iter_mut().enumerate().take(m) {
            *mi = (0..m).map(|j| e[(i, j)] * s[j]).sum();
        }
        for k in 0..nodes.len() {
            let z = nodes.point(k);
            for i in 0..m {
                y[i] = mean[i] + z[i];
            }
            let st = grid.stencil(&y[..m]);
            let w = nodes.weights[k];
            for a in 0..st.len {
                row[st.index[a]] += w * st.weight[a];
            }
        }
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest ratio of consecutive updates, ignoring updates at round-off level.
fn observed_ratio(trace: &[f64]) -> f64 {
    let floor = trace.first().copied().unwrap_or(0.0) * 1e-12;
    trace
        .windows(2)
        .filter(|w| w[0] > floor.max(f64::MIN_POSITIVE))
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max)
}
