//! The OU semigroup `R_t φ(x) = ∫ φ(e^{tA}x + y) N(0,Q_t)(dy)`, its gradient,
//! its generator `L`, and the resolvent `R(λ,L)` as a Laplace transform.
//!
//! Cylindrical functions are integrated on their own `m`-dimensional
//! subspace with tensor Gauss–Hermite; other functions use full-dimensional
//! tensor rules (effective dimension at most 6) or seeded Monte Carlo.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::linalg::{Matrix, Vector};
use crate::model::OperatorModel;
use crate::quadrature::{LaplaceRule, TensorHermite};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadMode {
    Tensor,
    #[serde(alias = "mc")]
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    #[serde(default = "default_mode")]
    pub mode: QuadMode,
    #[serde(default = "default_nodes")]
    pub nodes_per_dim: usize,
    #[serde(default = "default_mc")]
    pub mc_count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub laplace_tmax: Option<f64>,
    #[serde(default = "default_laplace_nodes")]
    pub laplace_nodes: usize,
}

fn default_mode() -> QuadMode {
    QuadMode::Tensor
}
fn default_nodes() -> usize {
    64
}
fn default_mc() -> usize {
    100_000
}
fn default_laplace_nodes() -> usize {
    128
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            nodes_per_dim: default_nodes(),
            mc_count: default_mc(),
            seed: 0,
            laplace_tmax: None,
            laplace_nodes: default_laplace_nodes(),
        }
    }
}

impl QuadratureSpec {
    pub fn monte_carlo(count: usize, seed: u64) -> Self {
        Self {
            mode: QuadMode::MonteCarlo,
            mc_count: count,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes_per_dim < 2 {
            return Err(Error::InvalidArgument("nodes_per_dim must be at least 2".into()));
        }
        if self.mc_count < 100 {
            return Err(Error::InvalidArgument("mc_count must be at least 100".into()));
        }
        if let Some(t) = self.laplace_tmax {
            if !(t > 0.0) {
                return Err(Error::InvalidArgument("laplace_tmax must be positive".into()));
            }
        }
        if self.laplace_nodes < 2 {
            return Err(Error::InvalidArgument("laplace_nodes must be at least 2".into()));
        }
        Ok(())
    }

    pub fn laplace_rule(&self, rate: f64) -> LaplaceRule {
        LaplaceRule::new(rate, self.laplace_tmax, self.laplace_nodes)
    }
}

/// Largest effective dimension handled by tensor rules.
pub const MAX_TENSOR_DIM: usize = 6;

/// A value with its numerical error estimate (standard error for Monte
/// Carlo, zero for deterministic rules).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
        }
    }
}

fn tensor_rule(dim: usize, n: usize) -> Arc<TensorHermite> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<TensorHermite>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = cache.lock().expect("rule cache").get(&(dim, n)) {
        return r.clone();
    }
    let rule = Arc::new(TensorHermite::new(dim, n));
    cache
        .lock()
        .expect("rule cache")
        .entry((dim, n))
        .or_insert(rule)
        .clone()
}

/// Quadrature points for `N(mean, cov)`: `mean + Σ_k √λ_k v_k z_k` over the
/// numerically nonzero eigenpairs.
#[derive(Debug, Clone)]
pub struct GaussNodes {
    pub dim: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussNodes {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    /// Nodes for a centred law; shift by the mean at use.
    pub fn centred(cov: &Matrix, nodes_per_dim: usize) -> Result<Self> {
        let m = cov.nrows();
        let (scales, dirs): (Vec<f64>, Vec<Vector>) = if m == 1 {
            let v = cov[(0, 0)];
            if v > 0.0 {
                (vec![v.sqrt()], vec![Vector::from_element(1, 1.0)])
            } else {
                (vec![], vec![])
            }
        } else if m == 0 {
            (vec![], vec![])
        } else {
            let sym = (cov + cov.transpose()) * 0.5;
            let scale = sym.diagonal().iter().map(|v| v.abs()).sum::<f64>();
            let eig = SymmetricEigen::new(sym);
            let cut = 1e-14 * scale;
            (0..m)
                .filter(|&k| eig.eigenvalues[k] > cut)
                .map(|k| (eig.eigenvalues[k].sqrt(), eig.eigenvectors.column(k).into_owned()))
                .unzip()
        };
        let r = scales.len();
        if r > MAX_TENSOR_DIM {
            return Err(Error::Quadrature(format!(
                "tensor rule refuses effective dimension {r} > {MAX_TENSOR_DIM}; use Monte Carlo"
            )));
        }
        if r == 0 {
            return Ok(Self {
                dim: m,
                points: vec![0.0; m],
                weights: vec![1.0],
            });
        }
        let rule = tensor_rule(r, nodes_per_dim);
        let mut points = Vec::with_capacity(rule.len() * m);
        for k in 0..rule.len() {
            let z = rule.point(k);
            for i in 0..m {
                points.push((0..r).map(|j| scales[j] * dirs[j][i] * z[j]).sum());
            }
        }
        Ok(Self {
            dim: m,
            points,
            weights: rule.weights.clone(),
        })
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time must be nonnegative, got {t}")));
    }
    Ok(())
}

fn check_point(model: &OperatorModel, phi: &ScalarField, x: &Vector) -> Result<()> {
    if x.len() != model.dim || phi.dim != model.dim {
        return Err(Error::InvalidArgument("dimension mismatch".into()));
    }
    Ok(())
}

/// `g` evaluated at seeded `N(0, Q_t)` draws.
fn mc_values<T, G>(model: &OperatorModel, t: f64, quad: &QuadratureSpec, g: G) -> Result<Vec<T>>
where
    T: Send,
    G: Fn(&Vector) -> T + Sync + Send,
{
    let law = model.covariance_at(t)?;
    let ys = law.sample(quad.mc_count, quad.seed)?;
    Ok(crate::par::map_slice(&ys, g))
}

fn mean_and_se(values: &[f64]) -> Estimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    Estimate {
        value: mean,
        std_error: (var / n).sqrt(),
    }
}

/// `R_t φ(x)` with its numerical error estimate.
pub fn apply_rt_estimate(
    model: &OperatorModel,
    phi: &ScalarField,
    t: f64,
    x: &Vector,
    quad: &QuadratureSpec,
) -> Result<Estimate> {
    check_time(t)?;
    check_point(model, phi, x)?;
    quad.validate()?;
    if t == 0.0 {
        return Ok(Estimate::exact(phi.value(x.as_slice())));
    }
    let mean = model.semigroup_apply(t, x)?;
    match quad.mode {
        QuadMode::Tensor => {
            let qt = model.covariance_matrix(t)?;
            if let Some(cyl) = &phi.cylinder {
                let p = &cyl.dirs;
                let s = p.transpose() * &mean;
                let cov = p.transpose() * qt * p;
                let nodes = GaussNodes::centred(&cov, quad.nodes_per_dim)?;
                let m = cyl.arity();
                let mut buf = vec![0.0; m];
                let mut acc = 0.0;
                for k in 0..nodes.len() {
                    let z = nodes.point(k);
                    for i in 0..m {
                        buf[i] = s[i] + z[i];
                    }
                    acc += nodes.weights[k] * cyl.profile.value(&buf);
                }
                Ok(Estimate::exact(acc))
            } else {
                let nodes = GaussNodes::centred(&qt, quad.nodes_per_dim)?;
                let mut buf = vec![0.0; model.dim];
                let mut acc = 0.0;
                for k in 0..nodes.len() {
                    let z = nodes.point(k);
                    for i in 0..model.dim {
                        buf[i] = mean[i] + z[i];
                    }
                    acc += nodes.weights[k] * phi.value(&buf);
                }
                Ok(Estimate::exact(acc))
            }
        }
        QuadMode::MonteCarlo => {
            let vals = mc_values(model, t, quad, |y| phi.value((&mean + y).as_slice()))?;
            Ok(mean_and_se(&vals))
        }
    }
}

pub fn apply_rt(
    model: &OperatorModel,
    phi: &ScalarField,
    t: f64,
    x: &Vector,
    quad: &QuadratureSpec,
) -> Result<f64> {
    apply_rt_estimate(model, phi, t, x, quad).map(|e| e.value)
}

/// `D R_t φ(x) = e^{tAᵀ} ∫ Dφ(e^{tA}x + y) N(0,Q_t)(dy)`.
pub fn apply_drt(
    model: &OperatorModel,
    phi: &ScalarField,
    t: f64,
    x: &Vector,
    quad: &QuadratureSpec,
) -> Result<Vector> {
    check_time(t)?;
    check_point(model, phi, x)?;
    quad.validate()?;
    if !phi.has_gradient() {
        return Err(Error::MissingOracle("gradient"));
    }
    let d = model.dim;
    if t == 0.0 {
        return phi.gradient(x.as_slice());
    }
    let e_ta = model.exp_ta(t)?;
    let mean = &e_ta * x;
    let avg = match quad.mode {
        QuadMode::Tensor => {
            let qt = model.covariance_matrix(t)?;
            if let Some(cyl) = &phi.cylinder {
                let p = &cyl.dirs;
                let m = cyl.arity();
                let s = p.transpose() * &mean;
                let cov = p.transpose() * qt * p;
                let nodes = GaussNodes::centred(&cov, quad.nodes_per_dim)?;
                let mut buf = vec![0.0; m];
                let mut g = vec![0.0; m];
                let mut acc = Vector::zeros(m);
                for k in 0..nodes.len() {
                    let z = nodes.point(k);
                    for i in 0..m {
                        buf[i] = s[i] + z[i];
                    }
                    cyl.profile.gradient(&buf, &mut g);
                    for i in 0..m {
                        acc[i] += nodes.weights[k] * g[i];
                    }
                }
                p * acc
            } else {
                let nodes = GaussNodes::centred(&qt, quad.nodes_per_dim)?;
                let mut buf = vec![0.0; d];
                let mut g = vec![0.0; d];
                let mut acc = Vector::zeros(d);
                for k in 0..nodes.len() {
                    let z = nodes.point(k);
                    for i in 0..d {
                        buf[i] = mean[i] + z[i];
                    }
                    phi.gradient_into(&buf, &mut g)?;
                    for i in 0..d {
                        acc[i] += nodes.weights[k] * g[i];
                    }
                }
                acc
            }
        }
        QuadMode::MonteCarlo => {
            let grads = mc_values(model, t, quad, |y| {
                phi.gradient((&mean + y).as_slice()).unwrap_or_else(|_| Vector::zeros(d))
            })?;
            let n = grads.len() as f64;
            grads.into_iter().fold(Vector::zeros(d), |a, g| a + g) / n
        }
    };
    Ok(e_ta.transpose() * avg)
}

/// How `apply_l` obtains second derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HessianMode {
    Oracle,
    FiniteDifference { step: f64 },
}

/// `Lφ(x) = ½ tr(Q D²φ(x)) + ⟨Ax, Dφ(x)⟩`.
pub fn apply_l(model: &OperatorModel, phi: &ScalarField, x: &Vector, mode: HessianMode) -> Result<f64> {
    check_point(model, phi, x)?;
    let (hess, grad) = match mode {
        HessianMode::Oracle => (phi.hessian(x.as_slice())?, phi.gradient(x.as_slice())?),
        HessianMode::FiniteDifference { step } => {
            let g = if phi.has_gradient() {
                phi.gradient(x.as_slice())?
            } else {
                phi.fd_gradient(x.as_slice(), step)
            };
            (phi.fd_hessian(x.as_slice(), step), g)
        }
    };
    let trace = (&model.q_matrix * hess).trace();
    Ok(0.5 * trace + (&model.a_matrix * x).dot(&grad))
}

/// Richardson-extrapolated difference quotient `2D(h/2) - D(h)`,
/// `D(h) = (R_hφ(x) - φ(x))/h`.
pub fn generator_difference_quotient(
    model: &OperatorModel,
    phi: &ScalarField,
    x: &Vector,
    h: f64,
    quad: &QuadratureSpec,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    let f0 = phi.value(x.as_slice());
    let dq = |s: f64| -> Result<f64> { Ok((apply_rt(model, phi, s, x, quad)? - f0) / s) };
    Ok(2.0 * dq(0.5 * h)? - dq(h)?)
}

/// Resolvent value with its error budget (Laplace tail plus Monte Carlo).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolventValue {
    pub value: f64,
    pub error_budget: f64,
}

fn check_lambda(model: &OperatorModel, lambda: f64) -> Result<()> {
    let floor = model.omega.max(0.0);
    if !(lambda > floor) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda = {lambda} must exceed max(omega, 0) = {floor}"
        )));
    }
    Ok(())
}

/// `R(λ,L)φ(x) = ∫₀^∞ e^{-λt} R_tφ(x) dt`.
pub fn resolvent_l(
    model: &OperatorModel,
    phi: &ScalarField,
    lambda: f64,
    x: &Vector,
    quad: &QuadratureSpec,
) -> Result<ResolventValue> {
    check_lambda(model, lambda)?;
    quad.validate()?;
    let rule = quad.laplace_rule(lambda);
    let mut value = 0.0;
    let mut var = 0.0;
    for (j, (&t, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
        let q = QuadratureSpec {
            seed: quad.seed.wrapping_add(j as u64),
            ..quad.clone()
        };
        let e = apply_rt_estimate(model, phi, t, x, &q)?;
        value += w * e.value;
        var += (w * e.std_error).powi(2);
    }
    Ok(ResolventValue {
        value,
        error_budget: 2.0 * phi.sup_norm * rule.tail_bound + 3.0 * var.sqrt(),
    })
}

/// `D R(λ,L)φ(x) = ∫₀^∞ e^{-λt} D R_tφ(x) dt` for `λ > ω`.
pub fn resolvent_dl(
    model: &OperatorModel,
    phi: &ScalarField,
    lambda: f64,
    x: &Vector,
    quad: &QuadratureSpec,
) -> Result<Vector> {
    check_lambda(model, lambda)?;
    quad.validate()?;
    let rule = quad.laplace_rule(lambda);
    let mut acc = Vector::zeros(model.dim);
    for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
        acc += apply_drt(model, phi, t, x, quad)? * w;
    }
    Ok(acc)
}
