use ou_perturb::fields::{builtin_field, DriftConfig, PhiConfig};
use ou_perturb::flow::{integrate_flow, integrate_flow_with_jacobian, DEFAULT_TOL};
use ou_perturb::linalg::Vector;
use ou_perturb::model::{build_model, ModelConfig};
use ou_perturb::ou::{self, HessianMode, QuadratureSpec};
use ou_perturb::perturbation::{apply_fcal, apply_feps, solve_resolvent_neps, SolverConfig};
use ou_perturb::sde::{self, SdeParams};

fn x1(v: f64) -> Vector {
    Vector::from_vec(vec![v])
}

fn reference() -> ou_perturb::model::OperatorModel {
    build_model(&ModelConfig::reference()).unwrap()
}

#[test]
fn semigroup_of_cosine_has_a_closed_form() {
    let m = reference();
    let phi = PhiConfig::cos().build(1).unwrap();
    for (t, x) in [(1.0f64, 0.0f64), (0.3, 1.2), (2.0, -0.7)] {
        let var = (1.0 - (-2.0 * t).exp()) / 2.0;
        let exact = (x * (-t).exp()).cos() * (-var / 2.0).exp();
        let v = ou::apply_rt(&m, &phi, t, &x1(x), &QuadratureSpec::default()).unwrap();
        assert!((v - exact).abs() < 1e-12, "t={t} x={x}: {v} vs {exact}");
    }
    let v = ou::apply_rt(&m, &phi, 1.0, &x1(0.0), &QuadratureSpec::default()).unwrap();
    assert!((v - 0.805_601_416_557_762_4).abs() < 1e-15);
}

#[test]
fn resolvent_of_cosine_at_the_origin() {
    let m = reference();
    let phi = PhiConfig::cos().build(1).unwrap();
    let r = ou::resolvent_l(&m, &phi, 2.0, &x1(0.0), &QuadratureSpec::default()).unwrap();
    let exact = 2.0 * (1.0 - (-0.25f64).exp());
    assert!((r.value - exact).abs() < 1e-9);
    assert!((r.value - 0.4427).abs() < 5e-4);
}

#[test]
fn covariance_and_generator_in_one_dimension() {
    let m = reference();
    for t in [0.1f64, 1.0, 3.0] {
        let q = m.covariance_matrix(t).unwrap()[(0, 0)];
        assert!((q - (1.0 - (-2.0 * t).exp()) / 2.0).abs() < 1e-14);
    }
    let phi = PhiConfig::cos().build(1).unwrap();
    for x in [0.0, 0.8, -2.0] {
        let l = ou::apply_l(&m, &phi, &x1(x), HessianMode::Oracle).unwrap();
        let exact = -0.5 * f64::cos(x) + x * f64::sin(x);
        assert!((l - exact).abs() < 1e-14);
    }
}

#[test]
fn tanh_flow_satisfies_sinh_law() {
    let field = builtin_field(&DriftConfig::named("tanh_componentwise", 1.0), 1).unwrap();
    for (t, x) in [(0.1, 0.5), (1.0, -2.0), (0.5, 3.0)] {
        let r = integrate_flow_with_jacobian(&field, &x1(x), t, DEFAULT_TOL).unwrap();
        let exact = (f64::exp(t) * f64::sinh(x)).asinh();
        assert!((r.eta[0] - exact).abs() < 1e-9);
        let d = f64::exp(t) * f64::cosh(x) / exact.cosh();
        assert!((r.jacobian.unwrap()[(0, 0)] - d).abs() < 1e-8);
    }
}

#[test]
fn drift_derivative_of_cosine() {
    let field = builtin_field(&DriftConfig::named("tanh_componentwise", 1.0), 1).unwrap();
    let phi = PhiConfig::cos().build(1).unwrap();
    let v = apply_fcal(&phi, &field, &x1(1.0)).unwrap();
    assert!((v + f64::sin(1.0) * f64::tanh(1.0)).abs() < 1e-15);
    assert!((v + 0.64097).abs() < 2e-4);
    let eps = 1e-3;
    let feps = apply_feps(&phi, &field, eps, &x1(1.0)).unwrap();
    let exact = (((f64::exp(eps) * f64::sinh(1.0)).asinh()).cos() - f64::cos(1.0)) / eps;
    assert!((feps - exact).abs() < 1e-6);
}

#[test]
fn zero_drift_reduces_every_operator_to_the_ou_case() {
    let m = reference();
    let zero = builtin_field(&DriftConfig::named("zero", 1.0), 1).unwrap();
    let phi = PhiConfig::cos().build(1).unwrap();
    assert_eq!(apply_feps(&phi, &zero, 0.1, &x1(0.4)).unwrap(), 0.0);
    let sol = solve_resolvent_neps(&m, &zero, 2.0, 0.1, &phi, &SolverConfig::default()).unwrap();
    let exact = 2.0 * (1.0 - (-0.25f64).exp());
    assert!((sol.phi_eps.value(&[0.0]) - exact).abs() < 1e-5);
    let params = SdeParams {
        dt: 0.01,
        n_paths: 50_000,
        seed: 5,
    };
    let p = sde::apply_pt(&m, &zero, &phi, 1.0, &x1(0.0), &params).unwrap();
    assert!((p.phi_mean - 0.805_601_416_557_762_4).abs() < 3.0 * p.std_error + 1e-12);
}

#[test]
fn mean_square_displacement_without_drift() {
    let m = reference();
    let zero = builtin_field(&DriftConfig::named("zero", 1.0), 1).unwrap();
    let (t, x) = (0.5, 1.5);
    let params = SdeParams {
        dt: 0.05,
        n_paths: 40_000,
        seed: 9,
    };
    let xs = sde::simulate_mild(&m, &zero, &x1(x), t, &params).unwrap();
    let n = xs.len() as f64;
    let sq: Vec<f64> = xs.iter().map(|y| (y[0] - x).powi(2)).collect();
    let mean = sq.iter().sum::<f64>() / n;
    let var = sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let exact = (f64::exp(-t) - 1.0).powi(2) * x * x + (1.0 - f64::exp(-2.0 * t)) / 2.0;
    assert!((mean - exact).abs() < 3.0 * (var / n).sqrt(), "{mean} vs {exact}");
    let flow = integrate_flow(&zero, &x1(x), t, DEFAULT_TOL).unwrap();
    assert_eq!(flow.eta[0], x);
}
