//! Low-discrepancy points in a ball, the finite stand-in for sup norms over the space.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::rng;

/// `count` Halton points in the radius-`radius` ball, shifted by a seed-derived
/// Cranley–Patterson rotation. Prefixes are nested: the first `n` points do
/// not depend on `count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupSampler {
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_radius() -> f64 {
    8.0
}

fn default_count() -> usize {
    4096
}

impl Default for SupSampler {
    fn default() -> Self {
        Self {
            radius: default_radius(),
            count: default_count(),
            seed: 0,
        }
    }
}

const SHIFT_STREAM: u64 = 0x4841_4c54;

fn primes(n: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(n);
    let mut c = 2u64;
    while out.len() < n {
        if out.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            out.push(c);
        }
        c += 1;
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

impl SupSampler {
    pub fn new(radius: f64, count: usize, seed: u64) -> Self {
        Self {
            radius,
            count,
            seed,
        }
    }

    pub fn with_count(&self, count: usize) -> Self {
        Self {
            count,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("sampler count must be positive".into()));
        }
        if !(self.radius > 0.0) {
            return Err(Error::InvalidArgument("sampler radius must be positive".into()));
        }
        Ok(())
    }

    pub fn points(&self, dim: usize) -> Result<Vec<Vector>> {
        self.validate()?;
        let bases = primes(dim);
        let mut r = rng::stream_rng(self.seed, SHIFT_STREAM);
        let shift: Vec<f64> = if self.seed == 0 {
            vec![0.0; dim]
        } else {
            (0..dim).map(|_| r.random::<f64>()).collect()
        };
        Ok((1..=self.count as u64)
            .map(|i| {
                let cube: Vec<f64> = bases
                    .iter()
                    .zip(&shift)
                    .map(|(&b, &s)| {
                        let u = (radical_inverse(i, b) + s).fract();
                        2.0 * u - 1.0
                    })
                    .collect();
                Vector::from_vec(cube_to_ball(&cube)) * self.radius
            })
            .collect())
    }
}

/// Radial map of `[-1,1]^d` onto the unit ball, `z ↦ z·‖z‖_∞/‖z‖₂`.
fn cube_to_ball(z: &[f64]) -> Vec<f64> {
    let inf = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let two = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if two == 0.0 {
        return z.to_vec();
    }
    z.iter().map(|v| v * inf / two).collect()
}
