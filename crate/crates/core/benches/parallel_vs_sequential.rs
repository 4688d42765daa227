use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ou_perturb::fields::{builtin_field, DriftConfig, PhiConfig};
use ou_perturb::flow;
use ou_perturb::linalg::Vector;
use ou_perturb::model::{build_model, ModelConfig};
use ou_perturb::par;
use ou_perturb::perturbation::{solve_resolvent_neps, SolverConfig};
use ou_perturb::sampler::SupSampler;
use ou_perturb::sde::{self, SdeParams};

fn modes(c: &mut Criterion, group: &str, mut f: impl FnMut()) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10).measurement_time(Duration::from_secs(5));
    g.bench_function(BenchmarkId::from_parameter("parallel"), |b| b.iter(&mut f));
    g.bench_function(BenchmarkId::from_parameter("sequential"), |b| b.iter(|| par::sequential(&mut f)));
    g.finish();
}

fn benches(c: &mut Criterion) {
    par::init_from_env();
    let model = build_model(&ModelConfig::reference()).unwrap();
    let tanh = builtin_field(&DriftConfig::named("tanh_componentwise", 1.0), 1).unwrap();
    let cos = PhiConfig::cos().build(1).unwrap();

    let params = SdeParams {
        dt: 1e-2,
        n_paths: 40_000,
        seed: 1,
    };
    let x = Vector::from_vec(vec![0.5]);
    modes(c, "sde_transition", || {
        black_box(sde::apply_pt(&model, &tanh, &cos, 1.0, &x, &params).unwrap());
    });

    let sampler = SupSampler::new(8.0, 512, 0);
    let tanh3 = builtin_field(&DriftConfig::named("tanh_componentwise", 1.0), 3).unwrap();
    modes(c, "flow_estimates", || {
        black_box(flow::check_flow_estimates(&tanh3, &sampler, &[0.5, 1.0], flow::DEFAULT_TOL).unwrap());
    });

    let cfg = SolverConfig {
        nodes: Some(401),
        ..SolverConfig::default()
    };
    modes(c, "resolvent_solve", || {
        black_box(solve_resolvent_neps(&model, &tanh, 2.0, 0.1, &cos, &cfg).unwrap());
    });
}

criterion_group!(parallel_vs_sequential, benches);
criterion_main!(parallel_vs_sequential);
