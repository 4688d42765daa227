//! Gauss rules used by the Gaussian and Laplace integrals.

use nalgebra::{DMatrix, SymmetricEigen};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Hermite rule for the standard normal law: `E g(Z) ≈ Σ w_i g(z_i)`.
///
/// Golub–Welsch on the probabilists' Hermite Jacobi matrix; weights sum to one.
pub fn gauss_hermite_normal(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    if n == 1 {
        return (vec![0.0], vec![1.0]);
    }
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], v * v)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // symmetrize to remove eigen-solver asymmetry
    for i in 0..n / 2 {
        let k = n - 1 - i;
        let x = 0.5 * (pairs[k].0 - pairs[i].0);
        let w = 0.5 * (pairs[k].1 + pairs[i].1);
        pairs[i] = (-x, w);
        pairs[k] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.into_iter().map(|(x, w)| (x, w / total)).unzip()
}

/// Tensor-product standard-normal rule in `m` dimensions.
#[derive(Debug, Clone)]
pub struct TensorHermite {
    pub dim: usize,
    /// Row-major: point `k` is `points[k*dim..(k+1)*dim]`.
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl TensorHermite {
    pub fn new(dim: usize, nodes_per_dim: usize) -> Self {
        let (z, w) = gauss_hermite_normal(nodes_per_dim);
        let count = nodes_per_dim.pow(dim as u32);
        let mut points = Vec::with_capacity(count * dim);
        let mut weights = Vec::with_capacity(count);
        let mut idx = vec![0usize; dim];
        for _ in 0..count {
            let mut weight = 1.0;
            for &i in &idx {
                points.push(z[i]);
                weight *= w[i];
            }
            weights.push(weight);
            for slot in idx.iter_mut() {
                *slot += 1;
                if *slot < nodes_per_dim {
                    break;
                }
                *slot = 0;
            }
        }
        Self {
            dim,
            points,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }
}

const PANEL_NODES: usize = 16;

/// Rule for `∫₀^∞ e^{-μt} g(t) dt ≈ Σ w_j g(t_j)`.
///
/// Composite Gauss–Legendre on `[0, T]` plus one tail node at `t = T`
/// carrying the exact tail mass `e^{-μT}/μ`, so constants are integrated
/// exactly. `tail_bound` is `e^{-μT}/μ`; the tail error for bounded `g` is at
/// most `2‖g‖·tail_bound`.
#[derive(Debug, Clone)]
pub struct LaplaceRule {
    pub rate: f64,
    pub horizon: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub tail_bound: f64,
}

/// Relative tail mass used when no horizon is given.
pub const LAPLACE_TAIL: f64 = 1e-10;

impl LaplaceRule {
    pub fn new(rate: f64, horizon: Option<f64>, node_count: usize) -> Self {
        assert!(rate > 0.0, "Laplace rate must be positive");
        let horizon = horizon
            .unwrap_or_else(|| ((1.0 / (LAPLACE_TAIL * rate)).ln() / rate).max(1e-3 / rate));
        let panels = node_count.div_ceil(PANEL_NODES).max(1);
        let per_panel = if node_count < PANEL_NODES {
            node_count.max(2)
        } else {
            PANEL_NODES
        };
        let (x, w) = gauss_legendre(per_panel);
        let width = horizon / panels as f64;
        let mut nodes = Vec::with_capacity(panels * per_panel + 1);
        let mut weights = Vec::with_capacity(panels * per_panel + 1);
        for p in 0..panels {
            let a = p as f64 * width;
            for (xi, wi) in x.iter().zip(&w) {
                let t = a + 0.5 * width * (xi + 1.0);
                nodes.push(t);
                weights.push(0.5 * width * wi * (-rate * t).exp());
            }
        }
        let tail = (-rate * horizon).exp() / rate;
        nodes.push(horizon);
        weights.push(tail);
        Self {
            rate,
            horizon,
            nodes,
            weights,
            tail_bound: tail,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * g(t))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(16);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert!((s - 2.0 / 31.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_matches_normal_moments() {
        let (z, w) = gauss_hermite_normal(64);
        let m2: f64 = z.iter().zip(&w).map(|(z, w)| w * z * z).sum();
        let m4: f64 = z.iter().zip(&w).map(|(z, w)| w * z.powi(4)).sum();
        let c: f64 = z.iter().zip(&w).map(|(z, w)| w * z.cos()).sum();
        assert!((m2 - 1.0).abs() < 1e-12);
        assert!((m4 - 3.0).abs() < 1e-11);
        assert!((c - (-0.5f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn laplace_rule_is_exact_on_constants() {
        let rule = LaplaceRule::new(12.0, None, 128);
        let s = rule.integrate(|_| 1.0);
        assert!((s - 1.0 / 12.0).abs() < 1e-15);
        let e = rule.integrate(|t| (-t).exp());
        assert!((e - 1.0 / 13.0).abs() < 1e-10);
    }

    #[test]
    fn tensor_rule_has_product_weights() {
        let r = TensorHermite::new(2, 8);
        assert_eq!(r.len(), 64);
        let s: f64 = r.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-14);
        let m: f64 = (0..r.len())
            .map(|k| r.weights[k] * r.point(k)[0].powi(2) * r.point(k)[1].powi(2))
            .sum();
        assert!((m - 1.0).abs() < 1e-12);
    }
}
