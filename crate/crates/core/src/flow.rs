//! The drift flow `dη/dt = F(η)`, `η(0,x) = x`, its Jacobian `η_x`, and the
//! sampled growth/Lipschitz/modulus estimates it satisfies.
//!
//! Integration is classical RK4 with the step count doubled until the
//! Richardson estimate `|y_{2n} - y_n|/15` is below the tolerance.

use crate::error::{Error, Result};
use crate::fields::{modulus_pairs, VectorField};
use crate::linalg::{self, Matrix, Vector};
use crate::par;
use crate::report::CheckReport;
use crate::sampler::SupSampler;

pub const DEFAULT_TOL: f64 = 1e-10;
const MAX_STEPS: usize = 1 << 22;

#[derive(Debug, Clone)]
pub struct FlowResult {
    pub eta: Vector,
    /// `η_x(t,x)` when requested.
    pub jacobian: Option<Matrix>,
    pub t: f64,
    pub x: Vector,
    pub step_count: usize,
    pub est_error: f64,
}

impl FlowResult {
    /// `h ↦ η_x(t,x)·h`, if the Jacobian was integrated.
    pub fn eta_x_apply(&self, h: &Vector) -> Option<Vector> {
        self.jacobian.as_ref().map(|j| j * h)
    }
}

fn check_args(t: f64, tol: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("flow time must be nonnegative, got {t}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    Ok(())
}

struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    fn run(&mut self, rhs: &impl Fn(&[f64], &mut [f64]), y: &mut [f64], t: f64, steps: usize) {
        let h = t / steps as f64;
        let n = y.len();
        for _ in 0..steps {
            rhs(y, &mut self.k1);
            for i in 0..n {
                self.tmp[i] = y[i] + 0.5 * h * self.k1[i];
            }
            rhs(&self.tmp, &mut self.k2);
            for i in 0..n {
                self.tmp[i] = y[i] + 0.5 * h * self.k2[i];
            }
            rhs(&self.tmp, &mut self.k3);
            for i in 0..n {
                self.tmp[i] = y[i] + h * self.k3[i];
            }
            rhs(&self.tmp, &mut self.k4);
            for i in 0..n {
                y[i] += h / 6.0 * (self.k1[i] + 2.0 * (self.k2[i] + self.k3[i]) + self.k4[i]);
            }
        }
    }
}

/// Adaptive RK4 by step doubling; returns `(steps, error estimate)` and
/// leaves the finer solution in `y`.
fn integrate(
    rhs: impl Fn(&[f64], &mut [f64]),
    y: &mut [f64],
    t: f64,
    tol: f64,
    rate: f64,
) -> Result<(usize, f64)> {
    if t == 0.0 {
        return Ok((0, 0.0));
    }
    let y0 = y.to_vec();
    let mut rk = Rk4::new(y.len());
    let mut steps = ((t * rate.max(1.0) * 4.0).ceil() as usize).max(1);
    let mut coarse = y0.clone();
    rk.run(&rhs, &mut coarse, t, steps);
    loop {
        let mut fine = y0.clone();
        rk.run(&rhs, &mut fine, t, 2 * steps);
        let err = linalg::dist(&fine, &coarse) / 15.0;
        steps *= 2;
        if err <= tol {
            y.copy_from_slice(&fine);
            return Ok((steps, err));
        }
        if steps >= MAX_STEPS {
            return Err(Error::FlowTolerance {
                tol,
                max_steps: MAX_STEPS,
                estimate: err,
            });
        }
        coarse = fine;
    }
}

/// `η(t,x)` written into `out`; returns the error estimate.
pub fn flow_into(field: &VectorField, x: &[f64], t: f64, tol: f64, out: &mut [f64]) -> Result<f64> {
    check_args(t, tol)?;
    out.copy_from_slice(x);
    if field.is_zero() {
        return Ok(0.0);
    }
    let drift = &field.drift;
    let (_, err) = integrate(|y, o| drift.eval(y, o), out, t, tol, field.k_const)?;
    Ok(err)
}

pub fn integrate_flow(field: &VectorField, x: &Vector, t: f64, tol: f64) -> Result<FlowResult> {
    check_args(t, tol)?;
    let mut y = x.as_slice().to_vec();
    let (steps, err) = if field.is_zero() {
        (0, 0.0)
    } else {
        let drift = &field.drift;
        integrate(|y, o| drift.eval(y, o), &mut y, t, tol, field.k_const)?
    };
    Ok(FlowResult {
        eta: Vector::from_vec(y),
        jacobian: None,
        t,
        x: x.clone(),
        step_count: steps,
        est_error: err,
    })
}

/// Flow together with the full Jacobian from the variational equation
/// `J' = DF(η) J`, `J(0) = I`.
pub fn integrate_flow_with_jacobian(field: &VectorField, x: &Vector, t: f64, tol: f64) -> Result<FlowResult> {
    check_args(t, tol)?;
    let d = x.len();
    let mut y = vec![0.0; d + d * d];
    y[..d].copy_from_slice(x.as_slice());
    for i in 0..d {
        y[d + i * d + i] = 1.0;
    }
    let drift = &field.drift;
    let (steps, err) = if field.is_zero() {
        (0, 0.0)
    } else {
        integrate(
            |s, o| {
                let (eta, jac) = s.split_at(d);
                let (oe, oj) = o.split_at_mut(d);
                drift.eval(eta, oe);
                for c in 0..d {
                    drift.jvp(eta, &jac[c * d..(c + 1) * d], &mut oj[c * d..(c + 1) * d]);
                }
            },
            &mut y,
            t,
            tol,
            field.k_const,
        )?
    };
    Ok(FlowResult {
        eta: Vector::from_column_slice(&y[..d]),
        jacobian: Some(Matrix::from_column_slice(d, d, &y[d..])),
        t,
        x: x.clone(),
        step_count: steps,
        est_error: err,
    })
}

/// `η_x(t,x)·h` by co-integrating `p' = DF(η)p`, `p(0) = h`.
pub fn flow_jacobian_apply(field: &VectorField, x: &Vector, t: f64, h: &Vector, tol: f64) -> Result<Vector> {
    check_args(t, tol)?;
    let d = x.len();
    let mut y = Vec::with_capacity(2 * d);
    y.extend_from_slice(x.as_slice());
    y.extend_from_slice(h.as_slice());
    if !field.is_zero() {
        let drift = &field.drift;
        integrate(
            |s, o| {
                let (eta, p) = s.split_at(d);
                let (oe, op) = o.split_at_mut(d);
                drift.eval(eta, oe);
                drift.jvp(eta, p, op);
            },
            &mut y,
            t,
            tol,
            field.k_const,
        )?;
    }
    Ok(Vector::from_column_slice(&y[d..]))
}

/// Result of [`check_flow_estimates`]; `vacuous` when nothing was checked.
#[derive(Debug, Clone)]
pub struct FlowChecks {
    pub reports: Vec<CheckReport>,
    pub vacuous: bool,
}

pub const REF_GROWTH_STATED: &str = "|η(t,x)| <= e^{‖F‖₀t}|x| (stated form, |x| >= 1 only)";
pub const REF_GROWTH: &str = "|η(t,x)| <= |x| + ‖F‖₀t";
pub const REF_LIPSCHITZ: &str = "|η(t,x)-η(t,y)| <= e^{Kt}|x-y|";
pub const REF_DISPLACEMENT: &str = "|η(t,x)-x| <= c‖F‖₀t with c = 1";
pub const REF_JACOBIAN: &str = "‖η_x(t,x)‖ <= e^{Kt}";
pub const REF_JACOBIAN_MODULUS: &str = "‖η_x(t,x)-η_x(t,y)‖ <= e^{Kt}θ_DF(e^{Kt}|x-y|)";

const FLOW_SLACK: f64 = 1e-6;

fn flow_report(id: &str, reference: &str, lhs: f64, rhs: f64, t: f64) -> CheckReport {
    CheckReport::new(id, reference, lhs, rhs, FLOW_SLACK * rhs.abs()).param("t", t)
}

/// One report per estimate per `(t, sample)`:
/// Lipschitz, displacement, Jacobian bound, Jacobian modulus, and the two
/// growth forms (the stated one informational).
pub fn check_flow_estimates(
    field: &VectorField,
    sampler: &SupSampler,
    times: &[f64],
    tol: f64,
) -> Result<FlowChecks> {
    sampler.validate()?;
    if times.is_empty() {
        return Ok(FlowChecks {
            reports: Vec::new(),
            vacuous: true,
        });
    }
    let pts = sampler.points(field.dim())?;
    let pairs = modulus_pairs(&pts);
    let k = field.k_const;
    let f0 = field.f_sup_norm;
    let theta = field.df_modulus;
    let mut reports = Vec::new();
    for &t in times {
        let ekt = (k * t).exp();
        let flows = par::map_slice(&pts, |x| integrate_flow_with_jacobian(field, x, t, tol));
        let flows: Vec<FlowResult> = flows.into_iter().collect::<Result<_>>()?;
        for r in &flows {
            let xn = r.x.norm();
            let en = r.eta.norm();
            let jac = r.jacobian.as_ref().expect("jacobian requested");
            reports.push(flow_report("flow.growth", REF_GROWTH, en, xn + f0 * t, t));
            if xn >= 1.0 {
                reports.push(
                    flow_report("flow.growth_stated", REF_GROWTH_STATED, en, (f0 * t).exp() * xn, t)
                        .informational(),
                );
            }
            reports.push(flow_report("flow.displacement", REF_DISPLACEMENT, (&r.eta - &r.x).norm(), f0 * t, t));
            reports.push(flow_report("flow.jacobian_bound", REF_JACOBIAN, linalg::op_norm(jac), ekt, t));
        }
        let pair_flows = par::map_slice(&pairs, |(x, y)| -> Result<(Vector, FlowResult, FlowResult)> {
            let a = integrate_flow_with_jacobian(field, x, t, tol)?;
            let b = integrate_flow_with_jacobian(field, y, t, tol)?;
            Ok((x - y, a, b))
        });
        for pf in pair_flows {
            let (dxy, a, b) = pf?;
            let dist = dxy.norm();
            reports.push(flow_report("flow.lipschitz", REF_LIPSCHITZ, (&a.eta - &b.eta).norm(), ekt * dist, t));
            let jd = linalg::op_norm(&(a.jacobian.unwrap() - b.jacobian.unwrap()));
            reports.push(flow_report(
                "flow.jacobian_modulus",
                REF_JACOBIAN_MODULUS,
                jd,
                ekt * theta.eval(ekt * dist),
                t,
            ));
        }
    }
    for r in reports.iter_mut() {
        r.params.insert("drift".into(), field.name.clone().into());
        r.params.insert("tol".into(), tol.into());
        r.seed = sampler.seed;
        r.sampler = Some(sampler.clone());
    }
    Ok(FlowChecks {
        reports,
        vacuous: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{builtin_field, DriftConfig};

    fn tanh1() -> VectorField {
        builtin_field(&DriftConfig::named("tanh_componentwise", 1.0), 1).unwrap()
    }

    /// `sinh η = eᵗ sinh x` for `F = tanh`.
    fn tanh_flow_exact(x: f64, t: f64) -> f64 {
        (t.exp() * x.sinh()).asinh()
    }

    #[test]
    fn zero_drift_flow_is_identity() {
        let z = builtin_field(&DriftConfig::named("zero", 1.0), 2).unwrap();
        let x = Vector::from_vec(vec![1.0, -2.0]);
        let r = integrate_flow(&z, &x, 3.0, 1e-10).unwrap();
        assert_eq!(r.eta, x);
        let h = Vector::from_vec(vec![0.5, 0.25]);
        assert_eq!(flow_jacobian_apply(&z, &x, 1.0, &h, 1e-10).unwrap(), h);
    }

    #[test]
    fn tanh_flow_matches_closed_form() {
        let r = integrate_flow(&tanh1(), &Vector::from_vec(vec![1.0]), 1.0, 1e-10).unwrap();
        let exact = tanh_flow_exact(1.0, 1.0);
        assert!((exact - 1.878_2).abs() < 1e-4);
        assert!((r.eta[0] - exact).abs() < 1e-9);
        assert!(r.est_error <= 1e-10);
        let z = integrate_flow(&tanh1(), &Vector::from_vec(vec![0.0]), 2.0, 1e-10).unwrap();
        assert_eq!(z.eta[0], 0.0);
    }

    #[test]
    fn tanh_jacobian_matches_closed_form_and_differences() {
        let f = tanh1();
        let x = Vector::from_vec(vec![1.0]);
        let h = Vector::from_vec(vec![1.0]);
        let p = flow_jacobian_apply(&f, &x, 1.0, &h, 1e-10).unwrap()[0];
        let eta = tanh_flow_exact(1.0, 1.0);
        let exact = 1.0f64.exp() * 1.0f64.cosh() / eta.cosh();
        assert!((exact - 1.2531).abs() < 1e-4);
        assert!((p - exact).abs() < 1e-8);
        let d = 1e-4;
        let fp = integrate_flow(&f, &Vector::from_vec(vec![1.0 + d]), 1.0, 1e-12).unwrap().eta[0];
        let fm = integrate_flow(&f, &Vector::from_vec(vec![1.0 - d]), 1.0, 1e-12).unwrap().eta[0];
        assert!(((fp - fm) / (2.0 * d) - p).abs() < 1e-5);
    }

    #[test]
    fn rejects_negative_time() {
        assert!(integrate_flow(&tanh1(), &Vector::from_vec(vec![0.0]), -1.0, 1e-8).is_err());
        assert!(integrate_flow(&tanh1(), &Vector::from_vec(vec![0.0]), 1.0, 0.0).is_err());
    }

    #[test]
    fn lipschitz_example_margin() {
        let f = tanh1();
        let a = integrate_flow(&f, &Vector::from_vec(vec![1.0]), 1.0, 1e-10).unwrap();
        let b = integrate_flow(&f, &Vector::from_vec(vec![0.0]), 1.0, 1e-10).unwrap();
        let margin = 1.0f64.exp() - (a.eta[0] - b.eta[0]).abs();
        assert!((margin - 0.840).abs() < 1e-3);
    }

    #[test]
    fn zero_drift_margins_equal_rhs() {
        let z = builtin_field(&DriftConfig::named("zero", 1.0), 1).unwrap();
        let c = check_flow_estimates(&z, &SupSampler::new(4.0, 16, 0), &[0.5], 1e-10).unwrap();
        for r in &c.reports {
            assert!(r.pass);
            assert_eq!(r.margin, r.rhs - r.lhs);
            match r.check_id.as_str() {
                "flow.jacobian_bound" => assert_eq!((r.lhs, r.rhs), (1.0, 1.0)),
                "flow.lipschitz" => assert!((r.lhs - r.rhs).abs() < 1e-15),
                "flow.displacement" | "flow.jacobian_modulus" => assert_eq!(r.lhs, 0.0),
                _ => {}
            }
        }
    }

    #[test]
    fn empty_times_are_vacuous() {
        let c = check_flow_estimates(&tanh1(), &SupSampler::default(), &[], 1e-10).unwrap();
        assert!(c.vacuous && c.reports.is_empty());
    }

    #[test]
    fn halved_k_breaks_the_jacobian_bound() {
        let mut cfg = DriftConfig::named("tanh_componentwise", 1.0);
        cfg.k_override = Some(0.5);
        let f = builtin_field(&cfg, 1).unwrap();
        let c = check_flow_estimates(&f, &SupSampler::new(2.0, 64, 0), &[1.0], 1e-10).unwrap();
        assert!(c
            .reports
            .iter()
            .any(|r| r.check_id == "flow.jacobian_bound" && !r.pass));
    }

    #[test]
    fn flow_semigroup_and_chain_rule() {
        let f = builtin_field(&DriftConfig::named("scaled_sigmoid_rank_one", 1.0), 2).unwrap();
        let tol = 1e-10;
        let x = Vector::from_vec(vec![0.3, -1.2]);
        let h = Vector::from_vec(vec![1.0, 2.0]);
        let (t, s) = (0.7, 0.4);
        let whole = integrate_flow_with_jacobian(&f, &x, t + s, tol).unwrap();
        let first = integrate_flow_with_jacobian(&f, &x, s, tol).unwrap();
        let second = integrate_flow_with_jacobian(&f, &first.eta, t, tol).unwrap();
        assert!((&whole.eta - &second.eta).norm() <= 10.0 * tol);
        let lhs = whole.eta_x_apply(&h).unwrap();
        let rhs = second.jacobian.unwrap() * first.jacobian.unwrap() * &h;
        assert!((lhs - rhs).norm() <= 10.0 * tol);
    }
}
