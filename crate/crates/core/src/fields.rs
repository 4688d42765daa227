//! Test functions `φ` and drift fields `F`, with the norm and modulus
//! metadata the estimates consume.
//!
//! Moduli of continuity are certified upper bounds supplied with each field;
//! they are never fitted from data.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::report::CheckReport;
use crate::sampler::SupSampler;
use crate::par;

/// Upper bound `θ(r) = min(cap, slope·r)` on a modulus of continuity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Modulus {
    pub slope: f64,
    pub cap: f64,
}

impl Modulus {
    pub const ZERO: Modulus = Modulus {
        slope: 0.0,
        cap: 0.0,
    };

    pub fn capped_linear(slope: f64, cap: f64) -> Self {
        Self { slope, cap }
    }

    pub fn eval(&self, r: f64) -> f64 {
        (self.slope * r.max(0.0)).min(self.cap)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            slope: self.slope * c,
            cap: self.cap * c,
        }
    }
}

/// A smooth function `g: ℝ^m → ℝ` with bounded, uniformly continuous gradient.
pub trait Profile: Send + Sync + fmt::Debug {
    fn arity(&self) -> usize;
    fn value(&self, s: &[f64]) -> f64;
    fn gradient(&self, s: &[f64], out: &mut [f64]);
    /// Writes the Hessian into `out` (m×m); `false` when not available.
    fn hessian(&self, _s: &[f64], _out: &mut Matrix) -> bool {
        false
    }
    fn sup_norm(&self) -> f64;
    fn grad_sup_norm(&self) -> f64;
    fn grad_modulus(&self) -> Modulus;
}

const SECH2_SLOPE: f64 = 0.769_800_358_919_501_2; // 4/(3√3) = sup |(sech²)'|

/// Built-in profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "g", rename_all = "snake_case")]
pub enum BuiltinProfile {
    /// `cos(s)`
    Cos,
    /// `sin(s)`
    Sin,
    /// constant `value`, ignoring all `arity` arguments
    Constant { value: f64, arity: usize },
    /// `R·tanh(s/R)`: linear near the origin, bounded by `R`
    SoftLinear { radius: f64 },
    /// `Π cos(s_i)`
    CosProduct { arity: usize },
    /// `Σ a_k cos(b_k s + c_k)` with `terms = [[a, b, c], ...]`
    Trig { terms: Vec<[f64; 3]> },
}

impl Profile for BuiltinProfile {
    fn arity(&self) -> usize {
        match self {
            Self::Constant { arity, .. } | Self::CosProduct { arity } => *arity,
            _ => 1,
        }
    }

    fn value(&self, s: &[f64]) -> f64 {
        match self {
            Self::Cos => s[0].cos(),
            Self::Sin => s[0].sin(),
            Self::Constant { value, .. } => *value,
            Self::SoftLinear { radius } => radius * (s[0] / radius).tanh(),
            Self::CosProduct { .. } => s.iter().map(|v| v.cos()).product(),
            Self::Trig { terms } => terms.iter().map(|[a, b, c]| a * (b * s[0] + c).cos()).sum(),
        }
    }

    fn gradient(&self, s: &[f64], out: &mut [f64]) {
        match self {
            Self::Cos => out[0] = -s[0].sin(),
            Self::Sin => out[0] = s[0].cos(),
            Self::Constant { .. } => out.iter_mut().for_each(|o| *o = 0.0),
            Self::SoftLinear { radius } => {
                let c = (s[0] / radius).cosh();
                out[0] = 1.0 / (c * c);
            }
            Self::CosProduct { .. } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = s
                        .iter()
                        .enumerate()
                        .map(|(j, v)| if i == j { -v.sin() } else { v.cos() })
                        .product();
                }
            }
            Self::Trig { terms } => {
                out[0] = terms
                    .iter()
                    .map(|[a, b, c]| -a * b * (b * s[0] + c).sin())
                    .sum()
            }
        }
    }

    fn hessian(&self, s: &[f64], out: &mut Matrix) -> bool {
        match self {
            Self::Cos => out[(0, 0)] = -s[0].cos(),
            Self::Sin => out[(0, 0)] = -s[0].sin(),
            Self::Constant { .. } => out.fill(0.0),
            Self::SoftLinear { radius } => {
                let u = s[0] / radius;
                let c = u.cosh();
                out[(0, 0)] = -2.0 * u.tanh() / (radius * c * c);
            }
            Self::CosProduct { arity } => {
                for i in 0..*arity {
                    for j in 0..*arity {
                        out[(i, j)] = s
                            .iter()
                            .enumerate()
                            .map(|(k, v)| {
                                if i == j && k == i {
                                    -v.cos()
                                } else if k == i || k == j {
                                    -v.sin()
                                } else {
                                    v.cos()
                                }
                            })
                            .product();
                    }
                }
            }
            Self::Trig { terms } => {
                out[(0, 0)] = terms
                    .iter()
                    .map(|[a, b, c]| -a * b * b * (b * s[0] + c).cos())
                    .sum()
            }
        }
        true
    }

    fn sup_norm(&self) -> f64 {
        match self {
            Self::Cos | Self::Sin | Self::CosProduct { .. } => 1.0,
            Self::Constant { value, .. } => value.abs(),
            Self::SoftLinear { radius } => radius.abs(),
            Self::Trig { terms } => terms.iter().map(|t| t[0].abs()).sum(),
        }
    }

    fn grad_sup_norm(&self) -> f64 {
        match self {
            Self::Cos | Self::Sin | Self::CosProduct { .. } | Self::SoftLinear { .. } => 1.0,
            Self::Constant { .. } => 0.0,
            Self::Trig { terms } => terms.iter().map(|t| (t[0] * t[1]).abs()).sum(),
        }
    }

    fn grad_modulus(&self) -> Modulus {
        match self {
            Self::Cos | Self::Sin => Modulus::capped_linear(1.0, 2.0),
            Self::Constant { .. } => Modulus::ZERO,
            Self::SoftLinear { radius } => Modulus::capped_linear(SECH2_SLOPE / radius, 1.0),
            // every Hessian entry is bounded by one
            Self::CosProduct { arity } => Modulus::capped_linear((*arity).max(1) as f64, 2.0),
            Self::Trig { terms } => Modulus::capped_linear(
                terms.iter().map(|t| (t[0] * t[1] * t[1]).abs()).sum(),
                2.0 * self.grad_sup_norm(),
            ),
        }
    }
}

/// `φ(x) = g(Pᵀx)` for orthonormal columns `P`.
#[derive(Clone, Debug)]
pub struct Cylinder {
    pub dirs: Matrix,
    pub profile: Arc<dyn Profile>,
}

/// Largest supported number of cylinder directions.
pub const MAX_ARITY: usize = 8;

impl Cylinder {
    pub fn arity(&self) -> usize {
        self.dirs.ncols()
    }

    /// `Pᵀx` into a stack buffer.
    #[inline]
    pub fn project(&self, x: &[f64], out: &mut [f64; MAX_ARITY]) {
        let d = self.dirs.nrows();
        for (j, o) in out.iter_mut().enumerate().take(self.dirs.ncols()) {
            let col = &self.dirs.as_slice()[j * d..(j + 1) * d];
            *o = linalg::dot(col, x);
        }
    }
}

pub type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type HessianFn = Arc<dyn Fn(&[f64], &mut Matrix) + Send + Sync>;

/// A bounded test function with optional derivative oracles.
#[derive(Clone)]
pub struct ScalarField {
    pub dim: usize,
    pub label: String,
    value: ValueFn,
    gradient: Option<GradientFn>,
    hessian: Option<HessianFn>,
    pub sup_norm: f64,
    pub grad_sup_norm: Option<f64>,
    pub grad_modulus: Option<Modulus>,
    pub cylinder: Option<Cylinder>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("sup_norm", &self.sup_norm)
            .field("grad_sup_norm", &self.grad_sup_norm)
            .field("grad_modulus", &self.grad_modulus)
            .field("cylinder", &self.cylinder.as_ref().map(|c| c.arity()))
            .finish()
    }
}

/// Builds `φ(x) = g(⟨a₁,x⟩,…,⟨a_m,x⟩)` from a profile and orthonormal directions
/// (columns of `dirs`).
pub fn make_cylindrical(profile: Arc<dyn Profile>, dirs: Matrix) -> Result<ScalarField> {
    let m = profile.arity();
    if dirs.ncols() != m {
        return Err(Error::InvalidField(format!(
            "profile takes {m} arguments but {} directions were given",
            dirs.ncols()
        )));
    }
    if m > MAX_ARITY {
        return Err(Error::InvalidField(format!("at most {MAX_ARITY} directions")));
    }
    if !linalg::orthonormal_columns(&dirs, 1e-10) {
        return Err(Error::InvalidField("directions are not orthonormal".into()));
    }
    let d = dirs.nrows();
    let cyl = Cylinder {
        dirs,
        profile: profile.clone(),
    };
    let c1 = cyl.clone();
    let value: ValueFn = Arc::new(move |x| {
        let mut s = [0.0; MAX_ARITY];
        c1.project(x, &mut s);
        c1.profile.value(&s[..m])
    });
    let c2 = cyl.clone();
    let gradient: GradientFn = Arc::new(move |x, out| {
        let mut s = [0.0; MAX_ARITY];
        let mut g = [0.0; MAX_ARITY];
        c2.project(x, &mut s);
        c2.profile.gradient(&s[..m], &mut g[..m]);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, gj) in g.iter().enumerate().take(m) {
            for (o, a) in out.iter_mut().zip(c2.dirs.column(j).iter()) {
                *o += gj * a;
            }
        }
    });
    let c3 = cyl.clone();
    let hessian: HessianFn = Arc::new(move |x, out| {
        let mut s = [0.0; MAX_ARITY];
        c3.project(x, &mut s);
        let mut h = Matrix::zeros(m, m);
        if !c3.profile.hessian(&s[..m], &mut h) {
            out.fill(f64::NAN);
            return;
        }
        *out = &c3.dirs * h * c3.dirs.transpose();
    });
    Ok(ScalarField {
        dim: d,
        label: format!("{profile:?}"),
        value,
        gradient: Some(gradient),
        hessian: Some(hessian),
        sup_norm: profile.sup_norm(),
        grad_sup_norm: Some(profile.grad_sup_norm()),
        grad_modulus: Some(profile.grad_modulus()),
        cylinder: Some(cyl),
    })
}

/// Unit coordinate directions `e_i` as columns.
pub fn coordinate_dirs(dim: usize, axes: &[usize]) -> Matrix {
    Matrix::from_fn(dim, axes.len(), |i, j| if i == axes[j] { 1.0 } else { 0.0 })
}

impl ScalarField {
    /// A field from bare oracles; no cylinder structure.
    pub fn from_fns(
        dim: usize,
        label: impl Into<String>,
        value: ValueFn,
        gradient: Option<GradientFn>,
        sup_norm: f64,
    ) -> Self {
        Self {
            dim,
            label: label.into(),
            value,
            gradient,
            hessian: None,
            sup_norm,
            grad_sup_norm: None,
            grad_modulus: None,
            cylinder: None,
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        make_cylindrical(
            Arc::new(BuiltinProfile::Constant { value: c, arity: 0 }),
            Matrix::zeros(dim, 0),
        )
        .expect("zero directions are orthonormal")
    }

    pub fn with_hessian(mut self, h: HessianFn) -> Self {
        self.hessian = Some(h);
        self
    }

    pub fn with_gradient_metadata(mut self, grad_sup: f64, modulus: Modulus) -> Self {
        self.grad_sup_norm = Some(grad_sup);
        self.grad_modulus = Some(modulus);
        self
    }

    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn has_hessian(&self) -> bool {
        self.hessian.is_some()
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let g = self.gradient.as_ref().ok_or(Error::MissingOracle("gradient"))?;
        g(x, out);
        Ok(())
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vector> {
        let mut out = Vector::zeros(self.dim);
        self.gradient_into(x, out.as_mut_slice())?;
        Ok(out)
    }

    pub fn hessian(&self, x: &[f64]) -> Result<Matrix> {
        let h = self.hessian.as_ref().ok_or(Error::MissingOracle("hessian"))?;
        let mut out = Matrix::zeros(self.dim, self.dim);
        h(x, &mut out);
        if out.iter().any(|v| v.is_nan()) {
            return Err(Error::MissingOracle("hessian"));
        }
        Ok(out)
    }

    /// Central-difference gradient.
    pub fn fd_gradient(&self, x: &[f64], step: f64) -> Vector {
        let mut y = x.to_vec();
        Vector::from_iterator(
            self.dim,
            (0..self.dim).map(|i| {
                let xi = y[i];
                y[i] = xi + step;
                let p = self.value(&y);
                y[i] = xi - step;
                let m = self.value(&y);
                y[i] = xi;
                (p - m) / (2.0 * step)
            }),
        )
    }

    /// Central-difference Hessian.
    pub fn fd_hessian(&self, x: &[f64], step: f64) -> Matrix {
        let d = self.dim;
        let mut y = x.to_vec();
        let f0 = self.value(x);
        let mut h = Matrix::zeros(d, d);
        for i in 0..d {
            let xi = y[i];
            y[i] = xi + step;
            let p = self.value(&y);
            y[i] = xi - step;
            let m = self.value(&y);
            y[i] = xi;
            h[(i, i)] = (p - 2.0 * f0 + m) / (step * step);
            for j in 0..i {
                let xj = y[j];
                let corner = |si: f64, sj: f64, y: &mut Vec<f64>| {
                    y[i] = xi + si * step;
                    y[j] = xj + sj * step;
                    let v = self.value(y);
                    y[i] = xi;
                    y[j] = xj;
                    v
                };
                let v = (corner(1.0, 1.0, &mut y) - corner(1.0, -1.0, &mut y)
                    - corner(-1.0, 1.0, &mut y)
                    + corner(-1.0, -1.0, &mut y))
                    / (4.0 * step * step);
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        h
    }

    /// Sup of `|φ|` over sample points.
    pub fn sample_sup(&self, points: &[Vector]) -> f64 {
        par::map_slice(points, |p| self.value(p.as_slice()).abs())
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Field configuration: `phi = {kind = "cylindrical", g = "cos", dirs = [[1.0]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiConfig {
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(flatten)]
    pub profile: BuiltinProfile,
    /// Direction rows; defaults to the first coordinate axes.
    #[serde(default)]
    pub dirs: Option<Vec<Vec<f64>>>,
}

fn default_kind() -> String {
    "cylindrical".into()
}

impl PhiConfig {
    pub fn cos() -> Self {
        Self {
            kind: default_kind(),
            profile: BuiltinProfile::Cos,
            dirs: None,
        }
    }

    pub fn build(&self, dim: usize) -> Result<ScalarField> {
        if self.kind != "cylindrical" {
            return Err(Error::Config(format!("unknown phi kind '{}'", self.kind)));
        }
        let m = self.profile.arity();
        let dirs = match &self.dirs {
            Some(rows) => {
                if rows.len() != m || rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::Config(format!(
                        "phi.dirs must hold {m} rows of length {dim}"
                    )));
                }
                Matrix::from_fn(dim, m, |i, j| rows[j][i])
            }
            None => {
                if m > dim {
                    return Err(Error::Config("more directions than dimensions".into()));
                }
                coordinate_dirs(dim, &(0..m).collect::<Vec<_>>())
            }
        };
        make_cylindrical(Arc::new(self.profile.clone()), dirs)
    }
}

/// `F: ℝ^d → ℝ^d` with Jacobian.
pub trait Drift: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]);
    fn jacobian(&self, x: &[f64], out: &mut Matrix);
    /// `DF(x)·v`.
    fn jvp(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        let mut j = Matrix::zeros(self.dim(), self.dim());
        self.jacobian(x, &mut j);
        let r = j * Vector::from_column_slice(v);
        out.copy_from_slice(r.as_slice());
    }
}

/// Drift with its certified constants `‖F‖₀`, `K`, `θ_{DF}`.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub name: String,
    pub drift: Arc<dyn Drift>,
    pub f_sup_norm: f64,
    pub k_const: f64,
    pub df_modulus: Modulus,
}

impl VectorField {
    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn value(&self, x: &[f64]) -> Vector {
        let mut out = Vector::zeros(self.dim());
        self.drift.eval(x, out.as_mut_slice());
        out
    }

    pub fn jacobian(&self, x: &[f64]) -> Matrix {
        let mut out = Matrix::zeros(self.dim(), self.dim());
        self.drift.jacobian(x, &mut out);
        out
    }

    pub fn is_zero(&self) -> bool {
        self.f_sup_norm == 0.0
    }
}

#[derive(Debug)]
struct ZeroDrift(usize);

impl Drift for ZeroDrift {
    fn dim(&self) -> usize {
        self.0
    }
    fn eval(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn jacobian(&self, _x: &[f64], out: &mut Matrix) {
        out.fill(0.0);
    }
    fn jvp(&self, _x: &[f64], _v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

#[derive(Debug)]
struct TanhComponentwise {
    dim: usize,
    scale: f64,
}

impl Drift for TanhComponentwise {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = self.scale * v.tanh();
        }
    }
    fn jacobian(&self, x: &[f64], out: &mut Matrix) {
        out.fill(0.0);
        for (i, v) in x.iter().enumerate() {
            let c = v.cosh();
            out[(i, i)] = self.scale / (c * c);
        }
    }
    fn jvp(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        for ((o, xi), vi) in out.iter_mut().zip(x).zip(v) {
            let c = xi.cosh();
            *o = self.scale * vi / (c * c);
        }
    }
}

/// `c·v·tanh(⟨w,x⟩)`.
#[derive(Debug)]
struct RankOneSigmoid {
    v: Vec<f64>,
    w: Vec<f64>,
    scale: f64,
}

impl Drift for RankOneSigmoid {
    fn dim(&self) -> usize {
        self.v.len()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let s = self.scale * linalg::dot(&self.w, x).tanh();
        for (o, vi) in out.iter_mut().zip(&self.v) {
            *o = s * vi;
        }
    }
    fn jacobian(&self, x: &[f64], out: &mut Matrix) {
        let c = linalg::dot(&self.w, x).cosh();
        let s = self.scale / (c * c);
        for i in 0..self.v.len() {
            for j in 0..self.w.len() {
                out[(i, j)] = s * self.v[i] * self.w[j];
            }
        }
    }
    fn jvp(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        let c = linalg::dot(&self.w, x).cosh();
        let s = self.scale / (c * c) * linalg::dot(&self.w, v);
        for (o, vi) in out.iter_mut().zip(&self.v) {
            *o = s * vi;
        }
    }
}

/// `c·v·exp(-|x|²/2)`.
#[derive(Debug)]
struct SmoothBump {
    v: Vec<f64>,
    scale: f64,
}

impl Drift for SmoothBump {
    fn dim(&self) -> usize {
        self.v.len()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let g = self.scale * (-0.5 * linalg::dot(x, x)).exp();
        for (o, vi) in out.iter_mut().zip(&self.v) {
            *o = g * vi;
        }
    }
    fn jacobian(&self, x: &[f64], out: &mut Matrix) {
        let g = self.scale * (-0.5 * linalg::dot(x, x)).exp();
        for i in 0..self.v.len() {
            for j in 0..x.len() {
                out[(i, j)] = -g * self.v[i] * x[j];
            }
        }
    }
}

/// Drift configuration: `drift = {name = "tanh_componentwise", scale = 1.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    pub name: String,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<f64>>,
    /// Overrides the certified `K`; only for sensitivity experiments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_override: Option<f64>,
}

fn default_scale() -> f64 {
    1.0
}

impl DriftConfig {
    pub fn named(name: &str, scale: f64) -> Self {
        Self {
            name: name.into(),
            scale,
            v: None,
            w: None,
            k_override: None,
        }
    }
}

fn unit_vector(v: Option<&Vec<f64>>, dim: usize, what: &str) -> Result<Vec<f64>> {
    let v = match v {
        Some(v) => v.clone(),
        None => {
            let mut e = vec![0.0; dim];
            e[0] = 1.0;
            e
        }
    };
    if v.len() != dim {
        return Err(Error::Config(format!("drift.{what} must have {dim} entries")));
    }
    let n = linalg::norm(&v);
    if n == 0.0 {
        return Err(Error::Config(format!("drift.{what} must be nonzero")));
    }
    Ok(v.into_iter().map(|x| x / n).collect())
}

/// Built-in drift families with exact constants.
pub fn builtin_field(cfg: &DriftConfig, dim: usize) -> Result<VectorField> {
    let c = cfg.scale;
    if !c.is_finite() || c < 0.0 {
        return Err(Error::Config("drift.scale must be a nonnegative number".into()));
    }
    let mut field = match cfg.name.as_str() {
        "zero" => VectorField {
            name: "zero".into(),
            drift: Arc::new(ZeroDrift(dim)),
            f_sup_norm: 0.0,
            k_const: 0.0,
            df_modulus: Modulus::ZERO,
        },
        "tanh_componentwise" | "tanh" => VectorField {
            name: "tanh_componentwise".into(),
            drift: Arc::new(TanhComponentwise { dim, scale: c }),
            f_sup_norm: (dim as f64).sqrt() * c,
            k_const: c,
            df_modulus: Modulus::capped_linear(SECH2_SLOPE * c, c),
        },
        "scaled_sigmoid_rank_one" | "rank_one" => {
            let v = unit_vector(cfg.v.as_ref(), dim, "v")?;
            let w = unit_vector(cfg.w.as_ref(), dim, "w")?;
            VectorField {
                name: "scaled_sigmoid_rank_one".into(),
                drift: Arc::new(RankOneSigmoid { v, w, scale: c }),
                f_sup_norm: c,
                k_const: c,
                df_modulus: Modulus::capped_linear(SECH2_SLOPE * c, c),
            }
        }
        "smooth_bump" => {
            let v = unit_vector(cfg.v.as_ref(), dim, "v")?;
            let k = c * (-0.5f64).exp();
            VectorField {
                name: "smooth_bump".into(),
                drift: Arc::new(SmoothBump { v, scale: c }),
                f_sup_norm: c,
                k_const: k,
                df_modulus: Modulus::capped_linear(c, 2.0 * k),
            }
        }
        other => return Err(Error::Config(format!("unknown drift '{other}'"))),
    };
    if let Some(k) = cfg.k_override {
        field.k_const = k;
    }
    Ok(field)
}

/// `max |f1 - f2|` over the sampler's points.
pub fn estimate_sup_distance(f1: &ScalarField, f2: &ScalarField, sampler: &SupSampler) -> Result<f64> {
    if f1.dim != f2.dim {
        return Err(Error::InvalidArgument("field dimensions differ".into()));
    }
    let pts = sampler.points(f1.dim)?;
    Ok(par::map_slice(&pts, |p| (f1.value(p.as_slice()) - f2.value(p.as_slice())).abs())
        .into_iter()
        .fold(0.0, f64::max))
}

/// Pairs `(x, y)` at separations spanning several decades, for modulus checks.
pub fn modulus_pairs(points: &[Vector]) -> Vec<(Vector, Vector)> {
    let n = points.len();
    let d = points.first().map_or(0, |p| p.len());
    let mut pairs = Vec::with_capacity(2 * n);
    for (i, x) in points.iter().enumerate() {
        pairs.push((x.clone(), points[(i + n / 2 + 1) % n].clone()));
        let step = [1e-3, 1e-2, 1e-1, 1.0][i % 4];
        let dir = &points[(i + 1) % n];
        let nrm = dir.norm();
        let u = if nrm > 0.0 { dir / nrm } else { Vector::from_element(d, 1.0 / (d as f64).sqrt()) };
        pairs.push((x.clone(), x + u * step));
    }
    pairs
}

/// Sampled invariants of a scalar field: sup bound, gradient vs finite
/// differences, and the gradient modulus.
pub fn check_scalar_field(phi: &ScalarField, sampler: &SupSampler) -> Result<Vec<CheckReport>> {
    let pts = sampler.points(phi.dim)?;
    let mut out = Vec::new();
    let sup = phi.sample_sup(&pts);
    out.push(
        CheckReport::new("field.phi.sup_norm", "|φ(x)| <= ‖φ‖", sup, phi.sup_norm, 0.0)
            .sampler(sampler),
    );
    if phi.has_gradient() {
        let worst_rel = par::map_slice(&pts, |p| {
            let g = phi.gradient(p.as_slice()).unwrap_or_else(|_| Vector::zeros(phi.dim));
            let fd = phi.fd_gradient(p.as_slice(), 1e-5);
            (g - &fd).norm() / fd.norm().max(1.0)
        })
        .into_iter()
        .fold(0.0, f64::max);
        out.push(
            CheckReport::new(
                "field.phi.gradient_fd",
                "Dφ matches central differences (relative error <= 1e-6 at step 1e-5)",
                worst_rel,
                1e-6,
                0.0,
            )
            .sampler(sampler),
        );
        if let Some(gs) = phi.grad_sup_norm {
            let gsup = par::map_slice(&pts, |p| {
                phi.gradient(p.as_slice()).map(|g| g.norm()).unwrap_or(0.0)
            })
            .into_iter()
            .fold(0.0, f64::max);
            out.push(
                CheckReport::new("field.phi.grad_sup_norm", "|Dφ(x)| <= ‖Dφ‖₀", gsup, gs, 1e-12)
                    .sampler(sampler),
            );
        }
        if let Some(theta) = phi.grad_modulus {
            let pairs = modulus_pairs(&pts);
            let reps = par::map_slice(&pairs, |(x, y)| {
                let gx = phi.gradient(x.as_slice()).unwrap_or_else(|_| Vector::zeros(phi.dim));
                let gy = phi.gradient(y.as_slice()).unwrap_or_else(|_| Vector::zeros(phi.dim));
                let rhs = theta.eval((x - y).norm());
                CheckReport::new(
                    "field.phi.grad_modulus",
                    "|Dφ(x)-Dφ(y)| <= θ_Dφ(|x-y|)",
                    (gx - gy).norm(),
                    rhs,
                    1e-6 * rhs + 1e-14,
                )
            });
            out.extend(crate::report::worst(reps, "field.phi.grad_modulus").map(|r| r.sampler(sampler)));
        }
    }
    Ok(out)
}

/// Sampled invariants of a drift: `‖F‖₀`, `K` and `θ_{DF}`.
pub fn check_vector_field(field: &VectorField, sampler: &SupSampler) -> Result<Vec<CheckReport>> {
    let pts = sampler.points(field.dim())?;
    let sup = par::map_slice(&pts, |p| field.value(p.as_slice()).norm())
        .into_iter()
        .fold(0.0, f64::max);
    let jnorm = par::map_slice(&pts, |p| linalg::op_norm(&field.jacobian(p.as_slice())))
        .into_iter()
        .fold(0.0, f64::max);
    let pairs = modulus_pairs(&pts);
    let theta = field.df_modulus;
    let reps = par::map_slice(&pairs, |(x, y)| {
        let diff = linalg::op_norm(&(field.jacobian(x.as_slice()) - field.jacobian(y.as_slice())));
        let rhs = theta.eval((x - y).norm());
        CheckReport::new(
            "field.drift.df_modulus",
            "‖DF(x)-DF(y)‖ <= θ_DF(|x-y|)",
            diff,
            rhs,
            1e-6 * rhs + 1e-14,
        )
    });
    let mut out = vec![
        CheckReport::new("field.drift.sup_norm", "|F(x)| <= ‖F‖₀", sup, field.f_sup_norm, 1e-12)
            .param("drift", field.name.clone())
            .sampler(sampler),
        CheckReport::new(
            "field.drift.k_const",
            "‖DF(x)‖ <= K",
            jnorm,
            field.k_const,
            1e-9 * field.k_const,
        )
        .param("drift", field.name.clone())
        .sampler(sampler),
    ];
    out.extend(
        crate::report::worst(reps, "field.drift.df_modulus")
            .map(|r| r.param("drift", field.name.clone()).sampler(sampler)),
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cos_e1(d: usize) -> ScalarField {
        make_cylindrical(Arc::new(BuiltinProfile::Cos), coordinate_dirs(d, &[0])).unwrap()
    }

    #[test]
    fn cylindrical_cos_metadata_and_values() {
        let phi = cos_e1(3);
        assert_eq!(phi.sup_norm, 1.0);
        assert_eq!(phi.grad_sup_norm, Some(1.0));
        assert_eq!(phi.value(&[0.5, 9.0, -2.0]), 0.5f64.cos());
        let g = phi.gradient(&[0.5, 9.0, -2.0]).unwrap();
        assert_eq!(g.as_slice(), &[-(0.5f64.sin()), 0.0, 0.0]);
    }

    #[test]
    fn constant_profile_has_zero_gradient() {
        let phi = make_cylindrical(
            Arc::new(BuiltinProfile::Constant { value: 2.5, arity: 1 }),
            coordinate_dirs(2, &[1]),
        )
        .unwrap();
        assert_eq!(phi.value(&[3.0, 4.0]), 2.5);
        assert_eq!(phi.gradient(&[3.0, 4.0]).unwrap().norm(), 0.0);
        assert_eq!(ScalarField::constant(4, 1.0).value(&[1.0, 2.0, 3.0, 4.0]), 1.0);
    }

    #[test]
    fn sin_modulus_is_min_two_r() {
        let phi = make_cylindrical(Arc::new(BuiltinProfile::Sin), coordinate_dirs(1, &[0])).unwrap();
        let m = phi.grad_modulus.unwrap();
        assert_eq!(m.eval(0.5), 0.5);
        assert_eq!(m.eval(5.0), 2.0);
        assert_eq!(m.eval(0.0), 0.0);
    }

    #[test]
    fn non_orthonormal_dirs_rejected() {
        let dirs = Matrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(make_cylindrical(Arc::new(BuiltinProfile::Cos), dirs).is_err());
    }

    #[test]
    fn cylindrical_gradient_is_orthogonal_to_complement() {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let dirs = Matrix::from_row_slice(3, 1, &[c, c, 0.0]);
        let phi = make_cylindrical(Arc::new(BuiltinProfile::Sin), dirs).unwrap();
        for p in SupSampler::new(5.0, 50, 1).points(3).unwrap() {
            let g = phi.gradient(p.as_slice()).unwrap();
            assert_eq!(g[2], 0.0);
            assert!((g[0] - g[1]).abs() == 0.0);
        }
    }

    #[test]
    fn builtin_drift_constants() {
        let z = builtin_field(&DriftConfig::named("zero", 1.0), 3).unwrap();
        assert_eq!((z.f_sup_norm, z.k_const), (0.0, 0.0));
        let t = builtin_field(&DriftConfig::named("tanh_componentwise", 1.0), 1).unwrap();
        assert_eq!((t.f_sup_norm, t.k_const), (1.0, 1.0));
        let t3 = builtin_field(&DriftConfig::named("tanh_componentwise", 2.0), 4).unwrap();
        assert_eq!((t3.f_sup_norm, t3.k_const), (4.0, 2.0));
        assert!(builtin_field(&DriftConfig::named("nope", 1.0), 1).is_err());
    }

    #[test]
    fn sech2_slope_constant() {
        // sup |d/dx sech²x| attained where tanh x = 1/√3
        let x = (1.0 / 3.0f64.sqrt()).atanh();
        let c = x.cosh();
        let v = 2.0 * x.tanh() / (c * c);
        assert!((v - SECH2_SLOPE).abs() < 1e-15);
    }

    #[test]
    fn every_builtin_drift_satisfies_its_invariants() {
        let sampler = SupSampler::new(10.0, 10_000, 3);
        for (name, d) in [
            ("zero", 2),
            ("tanh_componentwise", 1),
            ("tanh_componentwise", 3),
            ("scaled_sigmoid_rank_one", 3),
            ("smooth_bump", 2),
        ] {
            let mut cfg = DriftConfig::named(name, 1.3);
            if d == 3 && name == "scaled_sigmoid_rank_one" {
                cfg.v = Some(vec![1.0, 2.0, 2.0]);
                cfg.w = Some(vec![0.0, 1.0, -1.0]);
            }
            let f = builtin_field(&cfg, d).unwrap();
            for r in check_vector_field(&f, &sampler).unwrap() {
                assert!(r.pass, "{name} d={d}: {r:?}");
            }
        }
    }

    #[test]
    fn builtin_profiles_satisfy_their_invariants() {
        let sampler = SupSampler::new(8.0, 2000, 5);
        let profiles: Vec<(BuiltinProfile, usize)> = vec![
            (BuiltinProfile::Cos, 1),
            (BuiltinProfile::Sin, 1),
            (BuiltinProfile::SoftLinear { radius: 4.0 }, 1),
            (BuiltinProfile::CosProduct { arity: 2 }, 2),
            (BuiltinProfile::Trig { terms: vec![[0.5, 2.0, 0.3], [0.25, -1.0, 1.0]] }, 1),
        ];
        for (p, m) in profiles {
            let phi = make_cylindrical(Arc::new(p.clone()), coordinate_dirs(3, &(0..m).collect::<Vec<_>>())).unwrap();
            for r in check_scalar_field(&phi, &sampler).unwrap() {
                assert!(r.pass, "{p:?}: {r:?}");
            }
            let x = [0.3, -0.7, 1.1];
            let h = phi.hessian(&x).unwrap();
            let fd = phi.fd_hessian(&x, 1e-4);
            assert!((h - fd).amax() < 1e-6, "{p:?}");
        }
    }

    #[test]
    fn sup_distance_examples() {
        let phi = cos_e1(1);
        let s = SupSampler::new(8.0, 4096, 0);
        assert_eq!(estimate_sup_distance(&phi, &phi, &s).unwrap(), 0.0);
        let zero = ScalarField::constant(1, 0.0);
        let d = estimate_sup_distance(&phi, &zero, &s).unwrap();
        assert!(d <= 1.0 && d > 0.999_99);
        let shifted = ScalarField::constant(1, 0.25);
        let c = ScalarField::constant(1, -0.5);
        assert_eq!(estimate_sup_distance(&shifted, &c, &s.with_count(1)).unwrap(), 0.75);
        assert!(estimate_sup_distance(&phi, &zero, &s.with_count(0)).is_err());
    }
}
