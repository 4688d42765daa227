//! Exponential-Euler simulation of the mild solution
//! `X(t) = e^{tA}x + ∫₀ᵗ e^{(t-s)A}F(X(s))ds + W_A(t)`, the transition
//! semigroup `P_tφ(x) = E φ(X(t,x))`, and Monte Carlo resolvents of `N`.
//!
//! Paths are simulated in batches of [`rng::BATCH`], each batch on its own
//! ChaCha stream, and reduced in batch order, so every estimate depends only
//! on the seed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{ScalarField, VectorField};
use crate::linalg::{self, Matrix, Vector};
use crate::model::OperatorModel;
use crate::ou::{self, QuadratureSpec};
use crate::par;
use crate::perturbation::{solve_resolvent_neps, SolverConfig};
use crate::quadrature::LaplaceRule;
use crate::report::{self, CheckReport};
use crate::rng;

/// One exponential-Euler step of length `h`:
/// `X ← e^{hA}X + (∫₀^h e^{sA}ds) F(X) + C z` with `CCᵀ = Q_h`.
#[derive(Debug, Clone)]
pub struct Stepper {
    d: usize,
    h: f64,
    e: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

fn row_major(m: &Matrix) -> Vec<f64> {
    let (r, c) = m.shape();
    (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect()
}

fn mat_vec(m: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = linalg::dot(&m[i * d..(i + 1) * d], x);
    }
}

impl Stepper {
    pub fn new(model: &OperatorModel, h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
        }
        Ok(Self {
            d: model.dim,
            h,
            e: row_major(&model.exp_ta(h)?),
            b: row_major(&model.integrated_semigroup(h)?),
            c: row_major(&model.covariance_at(h)?.factor),
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// `C z`.
    pub fn noise(&self, z: &[f64], out: &mut [f64]) {
        mat_vec(&self.c, z, out);
    }

    /// `e^{hA} v`.
    pub fn propagate(&self, v: &[f64], out: &mut [f64]) {
        mat_vec(&self.e, v, out);
    }

    /// Advances `x` in place given a noise increment `w ~ N(0, Q_h)`.
    pub fn step(&self, field: &VectorField, x: &mut [f64], w: &[f64], scratch: &mut Scratch) {
        let d = self.d;
        let Scratch { fx, ex, bf, .. } = scratch;
        if field.is_zero() {
            fx[..d].fill(0.0);
        } else {
            field.drift.eval(x, &mut fx[..d]);
        }
        mat_vec(&self.e, x, &mut ex[..d]);
        mat_vec(&self.b, &fx[..d], &mut bf[..d]);
        for i in 0..d {
            x[i] = ex[i] + bf[i] + w[i];
        }
    }
}

/// Per-path work buffers.
#[derive(Debug, Clone)]
pub struct Scratch {
    fx: Vec<f64>,
    ex: Vec<f64>,
    bf: Vec<f64>,
    z1: Vec<f64>,
    z2: Vec<f64>,
    n1: Vec<f64>,
    n2: Vec<f64>,
    nc: Vec<f64>,
}

impl Scratch {
    pub fn new(d: usize) -> Self {
        let v = || vec![0.0; d];
        Self {
            fx: v(),
            ex: v(),
            bf: v(),
            z1: v(),
            z2: v(),
            n1: v(),
            n2: v(),
            nc: v(),
        }
    }
}

fn fill_normal(r: &mut ChaCha8Rng, z: &mut [f64]) {
    for v in z.iter_mut() {
        *v = r.sample(StandardNormal);
    }
}

/// Simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeParams {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_dt() -> f64 {
    1e-3
}
fn default_paths() -> usize {
    100_000
}

impl Default for SdeParams {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            n_paths: default_paths(),
            seed: 0,
        }
    }
}

impl SdeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument("dt must be positive".into()));
        }
        if self.n_paths < 2 {
            return Err(Error::InvalidArgument("at least two paths are needed".into()));
        }
        Ok(())
    }
}

fn check_dims(model: &OperatorModel, field: &VectorField, x: &Vector) -> Result<()> {
    if field.dim() != model.dim || x.len() != model.dim {
        return Err(Error::InvalidArgument("dimension mismatch".into()));
    }
    Ok(())
}

/// Steps of length `dt` covering `[0, t]`, the last one shortened.
struct Schedule {
    full: Stepper,
    count: usize,
    last: Option<Stepper>,
}

impl Schedule {
    fn new(model: &OperatorModel, t: f64, dt: f64) -> Result<Self> {
        let full = Stepper::new(model, dt)?;
        let mut count = (t / dt).floor() as usize;
        let mut rem = t - count as f64 * dt;
        if rem <= 1e-12 * dt {
            rem = 0.0;
        } else if rem >= dt * (1.0 - 1e-12) {
            count += 1;
            rem = 0.0;
        }
        let last = if rem > 0.0 { Some(Stepper::new(model, rem)?) } else { None };
        Ok(Self { full, count, last })
    }

    fn run(&self, field: &VectorField, x: &mut [f64], r: &mut ChaCha8Rng, s: &mut Scratch) {
        let d = x.len();
        let mut z = std::mem::take(&mut s.z1);
        let mut w = std::mem::take(&mut s.n1);
        for _ in 0..self.count {
            fill_normal(r, &mut z[..d]);
            self.full.noise(&z[..d], &mut w[..d]);
            self.full.step(field, x, &w[..d], s);
        }
        if let Some(last) = &self.last {
            fill_normal(r, &mut z[..d]);
            last.noise(&z[..d], &mut w[..d]);
            last.step(field, x, &w[..d], s);
        }
        s.z1 = z;
        s.n1 = w;
    }
}

/// Terminal states `X(t, x)` of `n_paths` independent paths.
pub fn simulate_mild(
    model: &OperatorModel,
    field: &VectorField,
    x: &Vector,
    t: f64,
    params: &SdeParams,
) -> Result<Vec<Vector>> {
    params.validate()?;
    check_dims(model, field, x)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time must be nonnegative, got {t}")));
    }
    if t == 0.0 {
        return Ok(vec![x.clone(); params.n_paths]);
    }
    let sched = Schedule::new(model, t, params.dt)?;
    let d = model.dim;
    let chunks = par::map_slice(&rng::batches(params.n_paths), |&(b, _, len)| {
        let mut r = rng::stream_rng(params.seed, b);
        let mut s = Scratch::new(d);
        (0..len)
            .map(|_| {
                let mut y = x.as_slice().to_vec();
                sched.run(field, &mut y, &mut r, &mut s);
                Vector::from_vec(y)
            })
            .collect::<Vec<_>>()
    });
    Ok(chunks.into_iter().flatten().collect())
}

/// Monte Carlo estimate of `P_tφ(x)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathEstimate {
    pub t: f64,
    pub x: Vec<f64>,
    pub phi_mean: f64,
    pub std_error: f64,
    pub mc_count: usize,
    pub dt: f64,
    pub seed: u64,
}

/// Running sums merged in batch order.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn merge(self, o: Moments) -> Moments {
        Moments {
            n: self.n + o.n,
            sum: self.sum + o.sum,
            sum_sq: self.sum_sq + o.sum_sq,
        }
    }

    fn mean(&self) -> f64 {
        self.sum / self.n
    }

    fn std_error(&self) -> f64 {
        if self.n < 2.0 {
            return 0.0;
        }
        let m = self.mean();
        let var = ((self.sum_sq - self.n * m * m) / (self.n - 1.0)).max(0.0);
        (var / self.n).sqrt()
    }
}

/// `P_tφ(x) = E φ(X(t,x))` with its standard error.
pub fn apply_pt(
    model: &OperatorModel,
    field: &VectorField,
    phi: &ScalarField,
    t: f64,
    x: &Vector,
    params: &SdeParams,
) -> Result<PathEstimate> {
    params.validate()?;
    check_dims(model, field, x)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time must be nonnegative, got {t}")));
    }
    let est = |mean: f64, se: f64| PathEstimate {
        t,
        x: x.as_slice().to_vec(),
        phi_mean: mean,
        std_error: se,
        mc_count: params.n_paths,
        dt: params.dt,
        seed: params.seed,
    };
    if t == 0.0 {
        return Ok(est(phi.value(x.as_slice()), 0.0));
    }
    let sched = Schedule::new(model, t, params.dt)?;
    let d = model.dim;
    let m = par::map_slice(&rng::batches(params.n_paths), |&(b, _, len)| {
        let mut r = rng::stream_rng(params.seed, b);
        let mut s = Scratch::new(d);
        let mut acc = Moments::default();
        let mut y = vec![0.0; d];
        for _ in 0..len {
            y.copy_from_slice(x.as_slice());
            sched.run(field, &mut y, &mut r, &mut s);
            acc.push(phi.value(&y));
        }
        acc
    })
    .into_iter()
    .fold(Moments::default(), Moments::merge);
    let se = m.std_error();
    // a constant integrand has exactly zero variance
    let se = if se < 1e-15 * m.mean().abs().max(1.0) { 0.0 } else { se };
    Ok(est(m.mean(), se))
}

/// `E[φ(X^{dt}(t,x)) - φ(X^{2dt}(t,x))]` on coupled paths: the coarse
/// increment over `[0, 2dt]` is `e^{dt·A}n₁ + n₂` built from the two fine
/// increments. Returns `(mean, std_error)`; `t` must be a multiple of `2dt`.
pub fn pt_step_difference(
    model: &OperatorModel,
    field: &VectorField,
    phi: &ScalarField,
    t: f64,
    x: &Vector,
    params: &SdeParams,
) -> Result<(f64, f64)> {
    params.validate()?;
    check_dims(model, field, x)?;
    let pairs = (t / (2.0 * params.dt)).round();
    if !(t > 0.0) || pairs < 1.0 || (pairs * 2.0 * params.dt - t).abs() > 1e-9 * t {
        return Err(Error::InvalidArgument(format!(
            "t = {t} must be a positive multiple of 2dt = {}",
            2.0 * params.dt
        )));
    }
    let pairs = pairs as usize;
    let fine = Stepper::new(model, params.dt)?;
    let coarse = Stepper::new(model, 2.0 * params.dt)?;
    let d = model.dim;
    let m = par::map_slice(&rng::batches(params.n_paths), |&(b, _, len)| {
        let mut r = rng::stream_rng(params.seed, b);
        let mut s = Scratch::new(d);
        let mut acc = Moments::default();
        let (mut xf, mut xc) = (vec![0.0; d], vec![0.0; d]);
        let (mut z1, mut z2) = (vec![0.0; d], vec![0.0; d]);
        let (mut n1, mut n2, mut nc) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        for _ in 0..len {
            xf.copy_from_slice(x.as_slice());
            xc.copy_from_slice(x.as_slice());
            for _ in 0..pairs {
                fill_normal(&mut r, &mut z1);
                fill_normal(&mut r, &mut z2);
                fine.noise(&z1, &mut n1);
                fine.noise(&z2, &mut n2);
                fine.propagate(&n1, &mut nc);
                for i in 0..d {
                    nc[i] += n2[i];
                }
                fine.step(field, &mut xf, &n1, &mut s);
                fine.step(field, &mut xf, &n2, &mut s);
                coarse.step(field, &mut xc, &nc, &mut s);
            }
            acc.push(phi.value(&xf) - phi.value(&xc));
        }
        acc
    })
    .into_iter()
    .fold(Moments::default(), Moments::merge);
    Ok((m.mean(), m.std_error()))
}

/// How [`resolvent_n_mc`] realises `∫₀^∞ e^{-λt} P_tφ(x) dt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResolventMode {
    /// `E ∫₀^σ φ(X_t) dt` with an independent `σ ~ Exp(λ)`, using
    /// `φ(x)/λ` as a control variate, and a coupled path at step `2dt`
    /// sharing the noise to estimate the step bias.
    #[default]
    Clock,
    /// Laplace quadrature nodes in time, each `P_tφ(x)` from the same paths.
    Grid,
}

/// Monte Carlo resolvent with its error bar.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolventMc {
    pub value: f64,
    pub std_error: f64,
    /// Estimated step bias of `value` (coarse minus fine, clock mode only).
    pub bias_estimate: f64,
    pub bias_std_error: f64,
    pub truncation: f64,
    /// `3·std_error + |bias| + 3·bias_std_error + truncation`.
    pub error_bar: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub mode: ResolventMode,
}

struct ClockPath<'a> {
    field: &'a VectorField,
    phi: &'a ScalarField,
    fine: &'a Stepper,
    coarse: &'a Stepper,
    dt: f64,
}

impl ClockPath<'_> {
    /// Returns `(∫₀^σ (φ(X) - φ(x)) dt` on the `dt` path, the same on the
    /// coupled `2dt` path).
    fn run(&self, x: &[f64], sigma: f64, r: &mut ChaCha8Rng, s: &mut Scratch, xf: &mut [f64], xc: &mut [f64]) -> (f64, f64) {
        let d = x.len();
        let dt = self.dt;
        xf.copy_from_slice(x);
        xc.copy_from_slice(x);
        let phi0 = self.phi.value(x);
        let (mut int_f, mut int_c) = (0.0, 0.0);
        let (mut pf, mut pc) = (0.0, 0.0);
        let mut t = 0.0;
        let mut z1 = std::mem::take(&mut s.z1);
        let mut z2 = std::mem::take(&mut s.z2);
        let mut n1 = std::mem::take(&mut s.n1);
        let mut n2 = std::mem::take(&mut s.n2);
        let mut nc = std::mem::take(&mut s.nc);
        loop {
            if t + 2.0 * dt > sigma {
                // final partial interval: left-point values
                let h1 = (sigma - t).min(dt);
                int_f += h1 * pf;
                if sigma - t > dt {
                    fill_normal(r, &mut z1[..d]);
                    self.fine.noise(&z1[..d], &mut n1[..d]);
                    self.fine.step(self.field, xf, &n1[..d], s);
                    let p = self.phi.value(xf) - phi0;
                    int_f += dt * 0.5 * (pf + p) - dt * pf;
                    int_f += (sigma - t - dt) * p;
                }
                int_c += (sigma - t) * pc;
                break;
            }
            fill_normal(r, &mut z1[..d]);
            fill_normal(r, &mut z2[..d]);
            self.fine.noise(&z1[..d], &mut n1[..d]);
            self.fine.noise(&z2[..d], &mut n2[..d]);
            self.fine.propagate(&n1[..d], &mut nc[..d]);
            for i in 0..d {
                nc[i] += n2[i];
            }
            self.fine.step(self.field, xf, &n1[..d], s);
            let p1 = self.phi.value(xf) - phi0;
            self.fine.step(self.field, xf, &n2[..d], s);
            let p2 = self.phi.value(xf) - phi0;
            int_f += 0.5 * dt * (pf + p1) + 0.5 * dt * (p1 + p2);
            pf = p2;
            self.coarse.step(self.field, xc, &nc[..d], s);
            let q = self.phi.value(xc) - phi0;
            int_c += dt * (pc + q);
            pc = q;
            t += 2.0 * dt;
        }
        s.z1 = z1;
        s.z2 = z2;
        s.n1 = n1;
        s.n2 = n2;
        s.nc = nc;
        (int_f, int_c)
    }
}

/// Monte Carlo `R(λ, N)φ(x) = ∫₀^∞ e^{-λt} P_tφ(x) dt`.
pub fn resolvent_n_mc(
    model: &OperatorModel,
    field: &VectorField,
    phi: &ScalarField,
    lambda: f64,
    x: &Vector,
    params: &SdeParams,
    mode: ResolventMode,
) -> Result<ResolventMc> {
    params.validate()?;
    check_dims(model, field, x)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let d = model.dim;
    let dt = params.dt;
    match mode {
        ResolventMode::Clock => {
            let fine = Stepper::new(model, dt)?;
            let coarse = Stepper::new(model, 2.0 * dt)?;
            let clock = Exp::new(lambda).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let path = ClockPath {
                field,
                phi,
                fine: &fine,
                coarse: &coarse,
                dt,
            };
            let phi0 = phi.value(x.as_slice());
            let sums = par::map_slice(&rng::batches(params.n_paths), |&(b, _, len)| {
                let mut r = rng::stream_rng(params.seed, b);
                let mut s = Scratch::new(d);
                let mut xf = vec![0.0; d];
                let mut xc = vec![0.0; d];
                let (mut mf, mut md) = (Moments::default(), Moments::default());
                for _ in 0..len {
                    let sigma: f64 = r.sample(clock);
                    let (f, c) = path.run(x.as_slice(), sigma, &mut r, &mut s, &mut xf, &mut xc);
                    mf.push(f);
                    md.push(c - f);
                }
                (mf, md)
            });
            let (mf, md) = sums
                .into_iter()
                .fold((Moments::default(), Moments::default()), |a, b| (a.0.merge(b.0), a.1.merge(b.1)));
            let value = phi0 / lambda + mf.mean();
            let (se, bias, bse) = (mf.std_error(), md.mean(), md.std_error());
            Ok(ResolventMc {
                value,
                std_error: se,
                bias_estimate: bias,
                bias_std_error: bse,
                truncation: 0.0,
                error_bar: 3.0 * se + bias.abs() + 3.0 * bse,
                n_paths: params.n_paths,
                dt,
                seed: params.seed,
                mode,
            })
        }
        ResolventMode::Grid => {
            let rule = LaplaceRule::new(lambda, None, 64);
            let mut legs = Vec::with_capacity(rule.len());
            let mut prev = 0.0;
            for &t in &rule.nodes {
                legs.push(if t > prev { Some(Schedule::new(model, t - prev, dt)?) } else { None });
                prev = t;
            }
            let m = par::map_slice(&rng::batches(params.n_paths), |&(b, _, len)| {
                let mut r = rng::stream_rng(params.seed, b);
                let mut s = Scratch::new(d);
                let mut acc = Moments::default();
                let mut y = vec![0.0; d];
                for _ in 0..len {
                    y.copy_from_slice(x.as_slice());
                    let mut z = 0.0;
                    for (leg, w) in legs.iter().zip(&rule.weights) {
                        if let Some(leg) = leg {
                            leg.run(field, &mut y, &mut r, &mut s);
                        }
                        z += w * phi.value(&y);
                    }
                    acc.push(z);
                }
                acc
            })
            .into_iter()
            .fold(Moments::default(), Moments::merge);
            let se = m.std_error();
            let truncation = 2.0 * phi.sup_norm * rule.tail_bound;
            Ok(ResolventMc {
                value: m.mean(),
                std_error: se,
                bias_estimate: 0.0,
                bias_std_error: 0.0,
                truncation,
                error_bar: 3.0 * se + truncation,
                n_paths: params.n_paths,
                dt,
                seed: params.seed,
                mode,
            })
        }
    }
}

pub const REF_MEAN_SQUARE: &str = "E|X(t,x)-X(s,x)|² = O(|t-s|) (continuity in mean square)";
pub const REF_MARKOV: &str = "P_{t+s}φ(x) = P_t(P_sφ)(x)";
pub const REF_LINEAR: &str = "F = 0: P_tφ = R_tφ";
pub const REF_CLOSURE_MONOTONE: &str = "max_grid |R(λ,N_ε)f - R(λ,N)f| nonincreasing as ε -> 0";
pub const REF_CLOSURE_FINAL: &str = "max_grid |R(λ,N_ε)f - R(λ,N)f| below the combined error budget at the smallest ε";

/// `E|X(s+δ) - X(s)|²` against
/// `3(δ²‖A‖²e^{2‖A‖δ}E|X(s)|² + δ²‖F‖₀²e^{2ω⁺δ} + δ tr(Q) e^{2ω⁺δ})`,
/// one report for the worst `δ`.
pub fn check_mean_square_continuity(
    model: &OperatorModel,
    field: &VectorField,
    x: &Vector,
    s: f64,
    deltas: &[f64],
    params: &SdeParams,
) -> Result<CheckReport> {
    let a_norm = linalg::op_norm(&model.a_matrix);
    let wp = model.omega.max(0.0);
    let f0 = field.f_sup_norm;
    let tr_q = model.q_matrix.trace();
    let base = simulate_mild(model, field, x, s, params)?;
    let d = model.dim;
    let mut reports = Vec::new();
    for (k, &delta) in deltas.iter().enumerate() {
        let sched = Schedule::new(model, delta, params.dt)?;
        let seed = params.seed.wrapping_add(1 + k as u64);
        let sums = par::map_slice(&rng::batches(base.len()), |&(b, start, len)| {
            let mut r = rng::stream_rng(seed, b);
            let mut sc = Scratch::new(d);
            let (mut inc, mut norm) = (Moments::default(), Moments::default());
            for x0 in &base[start..start + len] {
                let mut y = x0.as_slice().to_vec();
                sched.run(field, &mut y, &mut r, &mut sc);
                inc.push(linalg::dist(&y, x0.as_slice()).powi(2));
                norm.push(x0.norm_squared());
            }
            (inc, norm)
        });
        let (inc, norm) = sums
            .into_iter()
            .fold((Moments::default(), Moments::default()), |a, b| (a.0.merge(b.0), a.1.merge(b.1)));
        let g = (2.0 * wp * delta).exp();
        let rhs_with = |m2: f64| {
            3.0 * (delta * delta * a_norm * a_norm * (2.0 * a_norm * delta).exp() * m2
                + delta * delta * f0 * f0 * g
                + delta * tr_q * g)
        };
        // the bound uses E|X(s)|² at its lower 3σ edge
        let m2_low = (norm.mean() - 3.0 * norm.std_error()).max(0.0);
        let rhs = rhs_with(m2_low);
        reports.push(
            CheckReport::new("sde.mean_square_continuity", REF_MEAN_SQUARE, inc.mean(), rhs, 3.0 * inc.std_error())
                .param("delta", delta)
                .param("s", s)
                .param("ratio_to_delta", inc.mean() / delta),
        );
    }
    let worst = report::worst(reports, "sde.mean_square_continuity")
        .ok_or_else(|| Error::InvalidArgument("no time increments given".into()))?;
    Ok(worst
        .param("dt", params.dt)
        .param("n_paths", params.n_paths)
        .param("drift", field.name.clone())
        .seed(params.seed))
}

/// `|P_{t+s}φ(x) - P_t(P_sφ)(x)|` within the combined Monte Carlo error;
/// the inner expectation uses `inner` paths per outer endpoint.
pub fn check_markov_property(
    model: &OperatorModel,
    field: &VectorField,
    phi: &ScalarField,
    x: &Vector,
    t: f64,
    s: f64,
    outer: usize,
    inner: usize,
    params: &SdeParams,
) -> Result<CheckReport> {
    let direct = apply_pt(
        model,
        field,
        phi,
        t + s,
        x,
        &SdeParams {
            n_paths: outer * inner,
            ..params.clone()
        },
    )?;
    let ends = simulate_mild(
        model,
        field,
        x,
        t,
        &SdeParams {
            n_paths: outer,
            seed: params.seed.wrapping_add(1),
            ..params.clone()
        },
    )?;
    let inner_means = par::map_range(ends.len(), |i| {
        apply_pt(
            model,
            field,
            phi,
            s,
            &ends[i],
            &SdeParams {
                n_paths: inner,
                seed: params.seed.wrapping_add(2 + i as u64),
                ..params.clone()
            },
        )
        .map(|e| e.phi_mean)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut m = Moments::default();
    inner_means.iter().for_each(|&v| m.push(v));
    let lhs = (direct.phi_mean - m.mean()).abs();
    let budget = 3.0 * (direct.std_error.powi(2) + m.std_error().powi(2)).sqrt();
    Ok(CheckReport::new("sde.markov_property", REF_MARKOV, lhs, 0.0, budget)
        .param("t", t)
        .param("s", s)
        .param("outer", outer)
        .param("inner", inner)
        .param("dt", params.dt)
        .seed(params.seed))
}

/// For `F = 0` the scheme is exact: `P_tφ(x)` against the tensor-quadrature
/// `R_tφ(x)` within `3·std_error`.
pub fn check_linear_consistency(
    model: &OperatorModel,
    phi: &ScalarField,
    x: &Vector,
    t: f64,
    params: &SdeParams,
) -> Result<CheckReport> {
    let zero = crate::fields::builtin_field(&crate::fields::DriftConfig::named("zero", 0.0), model.dim)?;
    let mc = apply_pt(model, &zero, phi, t, x, params)?;
    let exact = ou::apply_rt(model, phi, t, x, &QuadratureSpec::default())?;
    Ok(
        CheckReport::new("sde.linear_consistency", REF_LINEAR, (mc.phi_mean - exact).abs(), 0.0, 3.0 * mc.std_error + 1e-12)
            .param("t", t)
            .param("dt", params.dt)
            .param("n_paths", params.n_paths)
            .param("exact", exact)
            .seed(params.seed),
    )
}

/// Grid distances between the solver's `R(λ,N_ε)f` and the Monte Carlo
/// resolvent, per `ε`.
#[derive(Debug, Clone, Serialize)]
pub struct ClosureStudy {
    pub lambda: f64,
    pub eps: Vec<f64>,
    pub grid: Vec<f64>,
    pub oracle: Vec<ResolventMc>,
    pub distances: Vec<f64>,
    pub solver_errors: Vec<f64>,
    pub budget: f64,
    pub reports: Vec<CheckReport>,
}

/// Compares `R(λ,N_ε)f` from the fixed-point solver with the Monte Carlo
/// `R(λ,N)f` on points `grid` (first coordinate axis) for decreasing `ε`.
#[allow(clippy::too_many_arguments)]
pub fn closure_consistency(
    model: &OperatorModel,
    field: &VectorField,
    f: &ScalarField,
    lambda: f64,
    eps_list: &[f64],
    grid: &[f64],
    params: &SdeParams,
    solver: &SolverConfig,
) -> Result<ClosureStudy> {
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("eps values must be strictly decreasing".into()));
    }
    let d = model.dim;
    let points: Vec<Vector> = grid
        .iter()
        .map(|&g| {
            let mut v = Vector::zeros(d);
            v[0] = g;
            v
        })
        .collect();
    let mut oracle = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let pp = SdeParams {
            seed: params.seed.wrapping_add(i as u64 * 0x9E37_79B9),
            ..params.clone()
        };
        oracle.push(resolvent_n_mc(model, field, f, lambda, p, &pp, ResolventMode::Clock)?);
    }
    let mc_bar = oracle.iter().map(|o| o.error_bar).fold(0.0, f64::max);
    let mut distances = Vec::new();
    let mut solver_errors = Vec::new();
    for &eps in eps_list {
        let sol = solve_resolvent_neps(model, field, lambda, eps, f, solver)?;
        let dist = points
            .iter()
            .zip(&oracle)
            .map(|(p, o)| (sol.phi_eps.value(p.as_slice()) - o.value).abs())
            .fold(0.0, f64::max);
        distances.push(dist);
        solver_errors.push(sol.fixed_point_error + sol.interpolation_error + sol.residual_sup);
    }
    let solver_err = solver_errors.iter().copied().fold(0.0, f64::max);
    let budget = mc_bar + solver_err + 2.0 * f.sup_norm * 1e-10;
    let (inc, _) = distances
        .windows(2)
        .map(|w| (w[1] - w[0], 0.0))
        .fold((f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a });
    let mut reports = Vec::new();
    let common = |r: CheckReport| {
        r.param("lambda", lambda)
            .param("eps", eps_list.to_vec())
            .param("distances", distances.clone())
            .param("grid", grid.to_vec())
            .param("dt", params.dt)
            .param("n_paths", params.n_paths)
            .seed(params.seed)
    };
    if distances.len() >= 2 {
        reports.push(common(CheckReport::new(
            "sde.closure_monotone",
            REF_CLOSURE_MONOTONE,
            inc,
            0.0,
            2.0 * solver_err,
        )));
    }
    if let Some(&last) = distances.last() {
        reports.push(common(
            CheckReport::new("sde.closure_final", REF_CLOSURE_FINAL, last, 0.0, budget)
                .param("mc_error_bar", mc_bar)
                .param("solver_error", solver_err),
        ));
    }
    Ok(ClosureStudy {
        lambda,
        eps: eps_list.to_vec(),
        grid: grid.to_vec(),
        oracle,
        distances,
        solver_errors,
        budget,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{builtin_field, coordinate_dirs, make_cylindrical, BuiltinProfile, DriftConfig, PhiConfig};
    use crate::flow;
    use crate::model::{build_model, ModelConfig};
    use std::sync::Arc;

    fn reference() -> OperatorModel {
        build_model(&ModelConfig::reference()).unwrap()
    }

    fn drift(name: &str) -> VectorField {
        builtin_field(&DriftConfig::named(name, 1.0), 1).unwrap()
    }

    fn cos() -> ScalarField {
        make_cylindrical(Arc::new(BuiltinProfile::Cos), coordinate_dirs(1, &[0])).unwrap()
    }

    fn x1(v: f64) -> Vector {
        Vector::from_vec(vec![v])
    }

    #[test]
    fn noiseless_linear_paths_are_exact() {
        let m = build_model(&ModelConfig::diagonal(&[-1.0], &[0.0])).unwrap();
        let p = SdeParams {
            dt: 0.01,
            n_paths: 3,
            seed: 0,
        };
        let paths = simulate_mild(&m, &drift("zero"), &x1(2.0), 0.73, &p).unwrap();
        for y in paths {
            assert!((y[0] - 2.0 * (-0.73f64).exp()).abs() < 1e-13);
        }
    }

    #[test]
    fn linear_paths_have_ou_moments() {
        let m = reference();
        let p = SdeParams {
            dt: 0.05,
            n_paths: 100_000,
            seed: 3,
        };
        let ys = simulate_mild(&m, &drift("zero"), &x1(1.0), 1.0, &p).unwrap();
        let n = ys.len() as f64;
        let mean = ys.iter().map(|y| y[0]).sum::<f64>() / n;
        let var = ys.iter().map(|y| (y[0] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let q1 = (1.0 - (-2.0f64).exp()) / 2.0;
        assert!((mean - (-1.0f64).exp()).abs() < 3.0 * (q1 / n).sqrt());
        assert!((var - q1).abs() < 3.0 * q1 * (2.0 / n).sqrt());
    }

    #[test]
    fn noiseless_drift_only_follows_the_flow() {
        let m = build_model(&ModelConfig::diagonal(&[0.0], &[0.0])).unwrap();
        let f = drift("tanh");
        let exact = flow::integrate_flow(&f, &x1(0.5), 1.0, 1e-12).unwrap().eta[0];
        let err = |dt: f64| {
            let p = SdeParams { dt, n_paths: 2, seed: 0 };
            (simulate_mild(&m, &f, &x1(0.5), 1.0, &p).unwrap()[0][0] - exact).abs()
        };
        let (a, b) = (err(0.01), err(0.005));
        assert!(a < 0.01 && (a / b - 2.0).abs() < 0.1, "{a} {b}");
    }

    #[test]
    fn pt_trivial_cases_and_cosine() {
        let m = reference();
        let p = SdeParams {
            dt: 0.01,
            n_paths: 20_000,
            seed: 1,
        };
        let one = ScalarField::constant(1, 1.0);
        let e = apply_pt(&m, &drift("tanh"), &one, 0.5, &x1(0.2), &p).unwrap();
        assert_eq!((e.phi_mean, e.std_error), (1.0, 0.0));
        let e = apply_pt(&m, &drift("tanh"), &cos(), 0.0, &x1(0.2), &p).unwrap();
        assert_eq!((e.phi_mean, e.std_error), (0.2f64.cos(), 0.0));
        let e = apply_pt(&m, &drift("zero"), &cos(), 1.0, &x1(0.0), &p).unwrap();
        assert!((e.phi_mean - 0.805_60).abs() < 3.0 * e.std_error + 1e-5);
    }

    #[test]
    fn estimates_do_not_depend_on_worker_count() {
        let m = reference();
        let p = SdeParams {
            dt: 0.01,
            n_paths: 3 * rng::BATCH + 17,
            seed: 9,
        };
        let a = apply_pt(&m, &drift("tanh"), &cos(), 0.3, &x1(0.4), &p).unwrap();
        let b = par::sequential(|| apply_pt(&m, &drift("tanh"), &cos(), 0.3, &x1(0.4), &p).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn resolvent_of_constants_and_linear_case() {
        let m = reference();
        let p = SdeParams {
            dt: 0.01,
            n_paths: 20_000,
            seed: 2,
        };
        let one = ScalarField::constant(1, 1.0);
        for mode in [ResolventMode::Clock, ResolventMode::Grid] {
            let r = resolvent_n_mc(&m, &drift("tanh"), &one, 2.0, &x1(0.0), &p, mode).unwrap();
            assert!((r.value - 0.5).abs() <= r.error_bar + 1e-12, "{r:?}");
        }
        let exact = 2.0 * (1.0 - (-0.25f64).exp());
        for mode in [ResolventMode::Clock, ResolventMode::Grid] {
            let r = resolvent_n_mc(&m, &drift("zero"), &cos(), 2.0, &x1(0.0), &p, mode).unwrap();
            assert!((r.value - exact).abs() <= r.error_bar, "{mode:?} {r:?}");
        }
    }

    #[test]
    fn markov_and_mean_square_checks_pass() {
        let m = reference();
        let p = SdeParams {
            dt: 0.01,
            n_paths: 20_000,
            seed: 4,
        };
        let r = check_markov_property(&m, &drift("tanh"), &cos(), &x1(0.5), 0.2, 0.3, 200, 200, &p).unwrap();
        assert!(r.pass, "{r:?}");
        let r = check_mean_square_continuity(&m, &drift("tanh"), &x1(0.5), 0.5, &[0.2, 0.1, 0.05], &p).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn step_difference_vanishes_without_drift() {
        let model = build_model(&ModelConfig::reference()).unwrap();
        let zero = builtin_field(&DriftConfig::named("zero", 1.0), 1).unwrap();
        let phi = PhiConfig::cos().build(1).unwrap();
        let params = SdeParams { dt: 0.05, n_paths: 2000, seed: 1 };
        let x = Vector::from_vec(vec![0.3]);
        let (mean, _) = pt_step_difference(&model, &zero, &phi, 1.0, &x, &params).unwrap();
        assert!(mean.abs() < 1e-12, "{mean}");
        let tanh = builtin_field(&DriftConfig::named("tanh_componentwise", 1.0), 1).unwrap();
        let (mean, se) = pt_step_difference(&model, &tanh, &phi, 1.0, &x, &params).unwrap();
        assert!(mean.abs() > 3.0 * se, "{mean} {se}");
        assert!(pt_step_difference(&model, &tanh, &phi, 0.15, &x, &params).is_err());
    }
}
