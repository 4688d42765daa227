//! The linear part: truncated space, `A`, `Q`, `e^{tA}`, `Q_t` and `N(0, Q_t)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::quadrature::gauss_legendre;
use crate::{par, rng};

/// Model section of a configuration file.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_diag: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_diag: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
}

impl ModelConfig {
    pub fn diagonal(a: &[f64], q: &[f64]) -> Self {
        Self {
            dim: a.len(),
            a_diag: Some(a.to_vec()),
            q_diag: Some(q.to_vec()),
            ..Self::default()
        }
    }

    /// One-dimensional model `A = -1`, `Q = 1` used throughout the tests.
    pub fn reference() -> Self {
        Self::diagonal(&[-1.0], &[1.0])
    }
}

const SYMMETRY_TOL: f64 = 1e-12;
const GROWTH_SLACK: f64 = 1e-9;
const COVARIANCE_TOL: f64 = 1e-10;

/// Validated `(A, Q, ω)` on `ℝ^d`. Immutable and shareable.
#[derive(Debug, Clone)]
pub struct OperatorModel {
    pub dim: usize,
    pub a_matrix: Matrix,
    pub q_matrix: Matrix,
    pub omega: f64,
    a_diag: Option<Vec<f64>>,
}

/// Time grid on which the growth bound of a dense `A` is verified.
pub fn growth_grid() -> Vec<f64> {
    let mut g = vec![1e-3, 1e-2];
    g.extend((1..=40).map(|k| 0.05 * k as f64));
    g
}

fn matrix_from_rows(rows: &[Vec<f64>], dim: usize, what: &str) -> Result<Matrix> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::InvalidModel(format!("{what} must be {dim}x{dim}")));
    }
    Ok(Matrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

pub fn build_model(cfg: &ModelConfig) -> Result<OperatorModel> {
    let d = cfg.dim;
    if d == 0 {
        return Err(Error::InvalidModel("dim must be at least 1".into()));
    }
    let a = match (&cfg.a_diag, &cfg.a_matrix) {
        (Some(v), None) => {
            if v.len() != d {
                return Err(Error::InvalidModel(format!("a_diag must have {d} entries")));
            }
            Matrix::from_diagonal(&Vector::from_column_slice(v))
        }
        (None, Some(rows)) => matrix_from_rows(rows, d, "a_matrix")?,
        _ => {
            return Err(Error::InvalidModel(
                "exactly one of a_diag, a_matrix is required".into(),
            ))
        }
    };
    let q = match (&cfg.q_diag, &cfg.q_matrix) {
        (Some(v), None) => {
            if v.len() != d {
                return Err(Error::InvalidModel(format!("q_diag must have {d} entries")));
            }
            Matrix::from_diagonal(&Vector::from_column_slice(v))
        }
        (None, Some(rows)) => matrix_from_rows(rows, d, "q_matrix")?,
        _ => {
            return Err(Error::InvalidModel(
                "exactly one of q_diag, q_matrix is required".into(),
            ))
        }
    };
    OperatorModel::new(a, q, cfg.omega)
}

impl OperatorModel {
    pub fn new(a: Matrix, q: Matrix, omega: Option<f64>) -> Result<Self> {
        let d = a.nrows();
        if d == 0 || !a.is_square() || q.shape() != (d, d) {
            return Err(Error::InvalidModel("A and Q must be square of equal size".into()));
        }
        if a.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite entries".into()));
        }
        if linalg::asymmetry(&q) > SYMMETRY_TOL {
            return Err(Error::InvalidModel("Q is not symmetric".into()));
        }
        let min_eig = linalg::min_eigenvalue(&q);
        if min_eig < -linalg::NEG_CLIP {
            return Err(Error::InvalidModel(format!(
                "Q is not positive semidefinite (eigenvalue {min_eig:e})"
            )));
        }
        let a_diag = linalg::is_diagonal(&a).then(|| a.diagonal().iter().copied().collect::<Vec<_>>());
        let omega = match &a_diag {
            Some(diag) => {
                let top = diag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                match omega {
                    Some(w) if w < top - 1e-12 => {
                        return Err(Error::InvalidModel(format!(
                            "omega {w} is below the growth rate {top} of A"
                        )))
                    }
                    Some(w) => w,
                    None => top,
                }
            }
            None => {
                let candidate = match omega {
                    Some(w) => w,
                    // logarithmic norm: a certified growth bound for ‖e^{tA}‖₂
                    None => linalg::max_eigenvalue(&((&a + a.transpose()) * 0.5)),
                };
                for t in growth_grid() {
                    let n = linalg::op_norm(&linalg::expm(&(&a * t)));
                    if n > (candidate * t).exp() * (1.0 + GROWTH_SLACK) {
                        return Err(Error::InvalidModel(format!(
                            "omega {candidate} is below the verified growth rate: ‖e^(tA)‖ = {n} at t = {t}"
                        )));
                    }
                }
                candidate
            }
        };
        Ok(Self {
            dim: d,
            a_matrix: a,
            q_matrix: q,
            omega,
            a_diag,
        })
    }

    pub fn is_diagonal(&self) -> bool {
        self.a_diag.is_some()
    }

    pub fn a_diagonal(&self) -> Option<&[f64]> {
        self.a_diag.as_deref()
    }

    fn check_time(t: f64) -> Result<()> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidArgument(format!("time must be nonnegative, got {t}")));
        }
        Ok(())
    }

    /// `e^{tA}` as a matrix.
    pub fn exp_ta(&self, t: f64) -> Result<Matrix> {
        Self::check_time(t)?;
        Ok(self.exp_ta_unchecked(t))
    }

    pub(crate) fn exp_ta_unchecked(&self, t: f64) -> Matrix {
        match &self.a_diag {
            Some(diag) => Matrix::from_diagonal(&Vector::from_iterator(
                self.dim,
                diag.iter().map(|a| (a * t).exp()),
            )),
            None if t == 0.0 => Matrix::identity(self.dim, self.dim),
            None => linalg::expm(&(&self.a_matrix * t)),
        }
    }

    /// `e^{tA} x`.
    pub fn semigroup_apply(&self, t: f64, x: &Vector) -> Result<Vector> {
        Self::check_time(t)?;
        if x.len() != self.dim {
            return Err(Error::InvalidArgument("dimension mismatch".into()));
        }
        Ok(match &self.a_diag {
            Some(diag) => Vector::from_iterator(
                self.dim,
                diag.iter().zip(x.iter()).map(|(a, xi)| (a * t).exp() * xi),
            ),
            None => self.exp_ta_unchecked(t) * x,
        })
    }

    /// `∫₀ᵗ e^{sA} ds`.
    pub fn integrated_semigroup(&self, t: f64) -> Result<Matrix> {
        Self::check_time(t)?;
        Ok(match &self.a_diag {
            Some(diag) => Matrix::from_diagonal(&Vector::from_iterator(
                self.dim,
                diag.iter().map(|&a| phi1(a, t)),
            )),
            None => self.integrate_matrix(t, |s| self.exp_ta_unchecked(s)),
        })
    }

    /// `Q_t = ∫₀ᵗ e^{sA} Q e^{sAᵀ} ds`.
    pub fn covariance_matrix(&self, t: f64) -> Result<Matrix> {
        Self::check_time(t)?;
        if t == 0.0 {
            return Ok(Matrix::zeros(self.dim, self.dim));
        }
        let cov = match &self.a_diag {
            Some(diag) => Matrix::from_fn(self.dim, self.dim, |i, j| {
                self.q_matrix[(i, j)] * phi1(diag[i] + diag[j], t)
            }),
            None => self.integrate_matrix(t, |s| {
                let e = self.exp_ta_unchecked(s);
                &e * &self.q_matrix * e.transpose()
            }),
        };
        Ok((&cov + cov.transpose()) * 0.5)
    }

    /// `N(0, Q_t)`.
    pub fn covariance_at(&self, t: f64) -> Result<GaussianLaw> {
        GaussianLaw::new(self.covariance_matrix(t)?)
    }

    /// Composite Gauss–Legendre with 32 nodes per unit time, panel count
    /// doubled until the Frobenius change drops below `1e-10`.
    fn integrate_matrix(&self, t: f64, integrand: impl Fn(f64) -> Matrix) -> Matrix {
        let (x, w) = gauss_legendre(32);
        let eval = |panels: usize| {
            let h = t / panels as f64;
            let mut acc = Matrix::zeros(self.dim, self.dim);
            for p in 0..panels {
                let a = p as f64 * h;
                for (xi, wi) in x.iter().zip(&w) {
                    acc += integrand(a + 0.5 * h * (xi + 1.0)) * (0.5 * h * wi);
                }
            }
            acc
        };
        let mut panels = (t.ceil() as usize).max(1);
        let mut prev = eval(panels);
        for _ in 0..12 {
            panels *= 2;
            let next = eval(panels);
            let change = (&next - &prev).norm();
            prev = next;
            if change < COVARIANCE_TOL {
                break;
            }
        }
        prev
    }
}

/// `(e^{at} - 1)/a` with the `a → 0` limit `t`.
pub fn phi1(a: f64, t: f64) -> f64 {
    let x = a * t;
    if x.abs() < 1e-300 {
        t
    } else {
        t * x.exp_m1() / x
    }
}

/// Centred Gaussian law with a cached square-root factor.
#[derive(Debug, Clone)]
pub struct GaussianLaw {
    pub mean: Vector,
    pub covariance: Matrix,
    pub factor: Matrix,
}

impl GaussianLaw {
    pub fn new(covariance: Matrix) -> Result<Self> {
        let factor = linalg::sym_sqrt(&covariance)?;
        Ok(Self {
            mean: Vector::zeros(covariance.nrows()),
            covariance,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    /// `n` draws, deterministic in `seed` and independent of the worker count.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vector>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be positive".into()));
        }
        let d = self.dim();
        let chunks = par::map_slice(&rng::batches(n), |&(b, _, len)| {
            let mut r = rng::stream_rng(seed, b);
            let mut z = Vector::zeros(d);
            (0..len)
                .map(|_| {
                    for zi in z.iter_mut() {
                        *zi = r.sample(StandardNormal);
                    }
                    &self.mean + &self.factor * &z
                })
                .collect::<Vec<_>>()
        });
        Ok(chunks.into_iter().flatten().collect())
    }
}
