//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Eigenvalues in `[-NEG_CLIP, 0)` are treated as rounding noise and clipped.
pub const NEG_CLIP: f64 = 1e-12;

/// Matrix exponential (Padé scaling and squaring).
pub fn expm(m: &Matrix) -> Matrix {
    m.clone().exp()
}

/// Largest singular value.
pub fn op_norm(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    m.singular_values().max()
}

pub fn is_diagonal(m: &Matrix) -> bool {
    m.is_square()
        && (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

pub fn asymmetry(m: &Matrix) -> f64 {
    (m - m.transpose()).amax()
}

/// Symmetric square root `S` with `S Sᵀ = C`, clipping tiny negative eigenvalues.
///
/// Fails when an eigenvalue is below `-NEG_CLIP * max(1, |C|)`.
pub fn sym_sqrt(c: &Matrix) -> Result<Matrix> {
    let n = c.nrows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    if n == 1 {
        let v = c[(0, 0)];
        if v < -NEG_CLIP * v.abs().max(1.0) {
            return Err(Error::InvalidModel(format!("negative variance {v:e}")));
        }
        return Ok(Matrix::from_element(1, 1, v.max(0.0).sqrt()));
    }
    let sym = (c + c.transpose()) * 0.5;
    let scale = sym.amax().max(1.0);
    let eig = SymmetricEigen::new(sym);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -NEG_CLIP * scale {
            return Err(Error::InvalidModel(format!(
                "matrix is not positive semidefinite (eigenvalue {v:e})"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * Matrix::from_diagonal(&roots) * q.transpose())
}

pub fn min_eigenvalue(c: &Matrix) -> f64 {
    if c.nrows() == 1 {
        return c[(0, 0)];
    }
    let sym = (c + c.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

pub fn max_eigenvalue(c: &Matrix) -> f64 {
    if c.nrows() == 1 {
        return c[(0, 0)];
    }
    let sym = (c + c.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.max()
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Checks that the columns of `dirs` are orthonormal within `tol`.
pub fn orthonormal_columns(dirs: &Matrix, tol: f64) -> bool {
    let gram = dirs.transpose() * dirs;
    let id = Matrix::identity(gram.nrows(), gram.ncols());
    (gram - id).amax() <= tol
}

/// Orthonormal basis (as columns) of the span of the columns of `m`.
pub fn orthonormal_basis(m: &Matrix, tol: f64) -> Matrix {
    let d = m.nrows();
    let mut basis: Vec<Vector> = Vec::new();
    for j in 0..m.ncols() {
        let mut v = m.column(j).into_owned();
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v -= b * c;
            }
        }
        let n = v.norm();
        if n > tol {
            basis.push(v / n);
        }
    }
    if basis.is_empty() {
        return Matrix::zeros(d, 0);
    }
    Matrix::from_columns(&basis)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_reproduces_psd_matrix() {
        let c = Matrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 0.3]);
        let s = sym_sqrt(&c).unwrap();
        assert!((&s * s.transpose() - &c).norm() < 1e-12);
    }

    #[test]
    fn sqrt_clips_rounding_noise_and_rejects_indefinite() {
        let c = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-14]);
        let s = sym_sqrt(&c).unwrap();
        assert_eq!(s[(1, 1)], 0.0);
        let bad = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-3]);
        assert!(sym_sqrt(&bad).is_err());
    }

    #[test]
    fn basis_drops_dependent_columns() {
        let m = Matrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let b = orthonormal_basis(&m, 1e-12);
        assert_eq!(b.ncols(), 2);
        assert!(orthonormal_columns(&b, 1e-14));
    }
}
