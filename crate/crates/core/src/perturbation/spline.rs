//! Natural cubic B-spline interpolation on uniform tensor grids in one or two
//! dimensions. Evaluation clamps to the grid box.

use crate::error::{Error, Result};

/// Largest supported grid dimension.
pub const MAX_GRID_DIM: usize = 2;

/// Uniform grid on `[-radius, radius]^dim` with `n` nodes per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub n: usize,
    pub radius: f64,
    pub h: f64,
}

/// Coefficient indices and weights of the basis functions touching a point.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub len: usize,
    pub index: [usize; 16],
    pub weight: [f64; 16],
}

fn bspline_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    let u = 1.0 - t;
    [
        u * u * u / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ]
}

impl Grid {
    pub fn new(dim: usize, n: usize, radius: f64) -> Result<Self> {
        if !(1..=MAX_GRID_DIM).contains(&dim) {
            return Err(Error::InvalidArgument(format!(
                "grid dimension must be 1 or 2, got {dim}"
            )));
        }
        if n < 4 {
            return Err(Error::InvalidArgument("grid needs at least 4 nodes per axis".into()));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidArgument("grid radius must be positive".into()));
        }
        Ok(Self {
            dim,
            n,
            radius,
            h: 2.0 * radius / (n - 1) as f64,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Coefficients per axis, including one ghost on each side.
    fn width(&self) -> usize {
        self.n + 2
    }

    pub fn coeff_count(&self) -> usize {
        self.width().pow(self.dim as u32)
    }

    fn axis(&self, i: usize) -> f64 {
        -self.radius + i as f64 * self.h
    }

    /// Coordinates of node `j`; axis 0 varies fastest.
    pub fn node(&self, j: usize, out: &mut [f64]) {
        let mut r = j;
        for o in out.iter_mut().take(self.dim) {
            *o = self.axis(r % self.n);
            r /= self.n;
        }
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.node_count())
            .map(|j| {
                let mut p = vec![0.0; self.dim];
                self.node(j, &mut p);
                p
            })
            .collect()
    }

    fn axis_stencil(&self, x: f64) -> (usize, [f64; 4]) {
        let u = ((x + self.radius) / self.h).clamp(0.0, (self.n - 1) as f64);
        let k = (u.floor() as usize).min(self.n - 2);
        // ghost offset: coefficient c_{k-1} lives at index k
        (k, bspline_weights(u - k as f64))
    }

    pub fn stencil(&self, x: &[f64]) -> Stencil {
        let mut s = Stencil {
            len: 0,
            index: [0; 16],
            weight: [0.0; 16],
        };
        match self.dim {
            1 => {
                let (k, w) = self.axis_stencil(x[0]);
                for a in 0..4 {
                    s.index[a] = k + a;
                    s.weight[a] = w[a];
                }
                s.len = 4;
            }
            _ => {
                let (k0, w0) = self.axis_stencil(x[0]);
                let (k1, w1) = self.axis_stencil(x[1]);
                let width = self.width();
                for b in 0..4 {
                    for a in 0..4 {
                        s.index[4 * b + a] = (k1 + b) * width + k0 + a;
                        s.weight[4 * b + a] = w0[a] * w1[b];
                    }
                }
                s.len = 16;
            }
        }
        s
    }

    pub fn eval(&self, coeffs: &[f64], x: &[f64]) -> f64 {
        let s = self.stencil(x);
        (0..s.len).map(|k| s.weight[k] * coeffs[s.index[k]]).sum()
    }

    /// Natural-spline coefficients interpolating `values` at the nodes.
    pub fn interpolate(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.node_count());
        let n = self.n;
        let width = self.width();
        match self.dim {
            1 => {
                let mut c = vec![0.0; width];
                solve_line(values, &mut c);
                c
            }
            _ => {
                // axis 0 first, into an (n+2) × n intermediate
                let mut mid = vec![0.0; width * n];
                let mut line = vec![0.0; width];
                for r in 0..n {
                    solve_line(&values[r * n..(r + 1) * n], &mut line);
                    for i in 0..width {
                        mid[i * n + r] = line[i];
                    }
                }
                let mut c = vec![0.0; width * width];
                for i in 0..width {
                    solve_line(&mid[i * n..(i + 1) * n], &mut line);
                    for (r, v) in line.iter().enumerate() {
                        c[r * width + i] = *v;
                    }
                }
                c
            }
        }
    }
}

/// One-dimensional natural interpolation: `c[k-1] + 4c[k] + c[k+1] = 6v[k]`
/// with zero second derivative at both ends. `out` has `n + 2` entries.
fn solve_line(v: &[f64], out: &mut [f64]) {
    let n = v.len();
    let c = &mut out[1..=n];
    c[0] = v[0];
    c[n - 1] = v[n - 1];
    let inner = n - 2;
    if inner > 0 {
        let mut diag = vec![4.0; inner];
        let mut rhs: Vec<f64> = (1..n - 1).map(|k| 6.0 * v[k]).collect();
        rhs[0] -= c[0];
        rhs[inner - 1] -= c[n - 1];
        for i in 1..inner {
            let m = 1.0 / diag[i - 1];
            diag[i] -= m;
            rhs[i] -= m * rhs[i - 1];
        }
        c[inner] = rhs[inner - 1] / diag[inner - 1];
        for i in (0..inner - 1).rev() {
            c[i + 1] = (rhs[i] - c[i + 2]) / diag[i];
        }
    }
    out[0] = 2.0 * out[1] - out[2];
    out[n + 1] = 2.0 * out[n] - out[n - 1];
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_nodes_and_reproduces_lines() {
        let g = Grid::new(1, 41, 2.0).unwrap();
        let vals: Vec<f64> = g.nodes().iter().map(|p| (3.0 * p[0]).sin()).collect();
        let c = g.interpolate(&vals);
        for (p, v) in g.nodes().iter().zip(&vals) {
            assert!((g.eval(&c, p) - v).abs() < 1e-13);
        }
        let lin: Vec<f64> = g.nodes().iter().map(|p| 2.0 * p[0] - 1.0).collect();
        let c = g.interpolate(&lin);
        assert!((g.eval(&c, &[0.123]) - (2.0 * 0.123 - 1.0)).abs() < 1e-13);
        let ones = vec![1.0; g.node_count()];
        let c = g.interpolate(&ones);
        let s = g.stencil(&[0.77]);
        assert!(((0..s.len).map(|k| s.weight[k] * c[s.index[k]]).sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn fourth_order_accuracy_inside() {
        let err = |n: usize| {
            let g = Grid::new(1, n, 3.0).unwrap();
            let vals: Vec<f64> = g.nodes().iter().map(|p| p[0].cos()).collect();
            let c = g.interpolate(&vals);
            (0..200)
                .map(|i| -1.5 + 3.0 * i as f64 / 199.0)
                .map(|x| (g.eval(&c, &[x]) - x.cos()).abs())
                .fold(0.0, f64::max)
        };
        let (a, b) = (err(61), err(121));
        assert!(a / b > 12.0, "{a} {b}");
    }

    #[test]
    fn tensor_grid_interpolates() {
        let g = Grid::new(2, 31, 2.0).unwrap();
        let f = |p: &[f64]| p[0].cos() * (0.5 * p[1]).sin() + p[1];
        let vals: Vec<f64> = g.nodes().iter().map(|p| f(p)).collect();
        let c = g.interpolate(&vals);
        for p in g.nodes().iter().step_by(37) {
            assert!((g.eval(&c, p) - f(p)).abs() < 1e-12);
        }
        assert!((g.eval(&c, &[0.31, -0.42]) - f(&[0.31, -0.42])).abs() < 1e-4);
    }

    #[test]
    fn clamps_outside_the_box() {
        let g = Grid::new(1, 11, 1.0).unwrap();
        let vals: Vec<f64> = g.nodes().iter().map(|p| p[0]).collect();
        let c = g.interpolate(&vals);
        assert!((g.eval(&c, &[5.0]) - 1.0).abs() < 1e-14);
        assert!(Grid::new(3, 11, 1.0).is_err());
    }
}
