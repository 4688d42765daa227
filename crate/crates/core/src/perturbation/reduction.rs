//! Restriction of the linear dynamics and the drift to a subspace `V`
//! that both leave invariant, so cylindrical problems over `V` can be solved
//! in `dim V` variables.

use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::flow;
use crate::linalg::{self, Matrix, Vector};
use crate::model::OperatorModel;
use crate::sampler::SupSampler;

const INVARIANCE_TOL: f64 = 1e-11;

/// Orthonormal basis `P` of `V` and the reduced model `(PᵀAP, PᵀQP)`.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub basis: Matrix,
    pub model: Option<OperatorModel>,
}

impl Reduction {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Reduction onto the span of `dirs`, falling back to the whole space when
    /// that span is not invariant and the whole space is small enough.
    pub fn new(model: &OperatorModel, field: &VectorField, dirs: &Matrix, max_dim: usize) -> Result<Self> {
        let p = linalg::orthonormal_basis(dirs, 1e-10);
        if Self::is_invariant(model, field, &p)? {
            return Self::with_basis(model, p);
        }
        if model.dim <= max_dim {
            return Self::with_basis(model, Matrix::identity(model.dim, model.dim));
        }
        Err(Error::Reduction(format!(
            "span of the {} given directions is not invariant under A* and the drift, \
             and the full dimension {} exceeds the grid limit {max_dim}",
            dirs.ncols(),
            model.dim
        )))
    }

    fn with_basis(model: &OperatorModel, p: Matrix) -> Result<Self> {
        let reduced = if p.ncols() == 0 {
            None
        } else {
            let a = p.transpose() * &model.a_matrix * &p;
            let q = p.transpose() * &model.q_matrix * &p;
            let q = (&q + q.transpose()) * 0.5;
            Some(OperatorModel::new(a, q, None)?)
        };
        Ok(Self {
            basis: p,
            model: reduced,
        })
    }

    /// `A*V ⊂ V` and `Pᵀ DF(x) (I - PPᵀ) = 0` on sample points.
    pub fn is_invariant(model: &OperatorModel, field: &VectorField, p: &Matrix) -> Result<bool> {
        let d = model.dim;
        if p.ncols() == d {
            return Ok(true);
        }
        let proj_out = Matrix::identity(d, d) - p * p.transpose();
        let a_scale = linalg::op_norm(&model.a_matrix).max(1.0);
        if linalg::op_norm(&(&proj_out * model.a_matrix.transpose() * p)) > INVARIANCE_TOL * a_scale {
            return Ok(false);
        }
        if field.is_zero() || p.ncols() == 0 {
            return Ok(true);
        }
        let k_scale = field.k_const.max(1.0);
        let mut pts = SupSampler::new(8.0, 64, 0).points(d)?;
        pts.push(Vector::zeros(d));
        for x in &pts {
            let j = field.jacobian(x.as_slice());
            if linalg::op_norm(&(p.transpose() * j * &proj_out)) > INVARIANCE_TOL * k_scale {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn lift(&self, s: &[f64]) -> Vector {
        &self.basis * Vector::from_column_slice(s)
    }

    pub fn project(&self, x: &[f64]) -> Vector {
        self.basis.transpose() * Vector::from_column_slice(x)
    }

    /// `Pᵀ η(t, P s)`.
    pub fn reduced_flow(&self, field: &VectorField, s: &[f64], t: f64, tol: f64) -> Result<Vector> {
        let x = self.lift(s);
        let mut out = vec![0.0; x.len()];
        flow::flow_into(field, x.as_slice(), t, tol, &mut out)?;
        Ok(self.project(&out))
    }
}
