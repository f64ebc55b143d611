use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use fvml::recon::{gradient, neighbor_values};
use fvml::solver::GradientMode;
use fvml::train::{LossWeights, Objective};
use fvml_bench::Fixture;

fn step(c: &mut Criterion) {
    let mut g = c.benchmark_group("step");
    g.sample_size(20);
    for n in [16, 32] {
        let fx = Fixture::new(n);
        for mode in [GradientMode::Gg, GradientMode::Lsq, GradientMode::MlLsq] {
            let solver = fx.solver(mode);
            let provider = fx.net.provider(fx.params.as_slice());
            let alpha = mode.is_ml().then_some(&provider);
            g.bench_with_input(BenchmarkId::new(mode.name(), 2 * n * n), &fx.w, |b, w| {
                b.iter(|| solver.step(black_box(w), alpha.map(|p| p as _)).expect("step"))
            });
        }
    }
    g.finish();
}

fn reconstruction(c: &mut Criterion) {
    let fx = Fixture::new(32);
    let solver = fx.solver(GradientMode::Lsq);
    let (nb, _) = neighbor_values(&fx.mesh, &fx.u, solver.boundary(), solver.gas());
    let mut g = c.benchmark_group("reconstruction");
    for mode in [GradientMode::Gg, GradientMode::Lsq] {
        g.bench_function(mode.name(), |b| {
            b.iter(|| gradient(mode.method(), &fx.mesh, black_box(&fx.u), &nb, None).expect("gradient"))
        });
    }
    g.bench_function("alpha_field", |b| {
        b.iter(|| {
            fx.net
                .alpha_field(&fx.mesh, &fx.params, black_box(&fx.u), &nb)
                .expect("alpha")
        })
    });
    g.finish();
}

fn backprop(c: &mut Criterion) {
    let fx = Fixture::new(8);
    let solver = fx.solver(GradientMode::MlLsq);
    let obj = Objective::new(&solver, &fx.net, LossWeights::default()).expect("objective");
    let provider = fx.net.provider(fx.params.as_slice());
    let mut refs = vec![fx.w.clone()];
    for _ in 0..2 {
        let next = solver.step(refs.last().unwrap(), Some(&provider)).expect("step").0;
        refs.push(next);
    }
    let mut g = c.benchmark_group("backprop");
    g.sample_size(10);
    for steps in [1, 2] {
        g.bench_with_input(BenchmarkId::new("rollout_gradient", steps), &refs[..=steps], |b, r| {
            b.iter(|| obj.gradient(black_box(&fx.params), r).expect("gradient"))
        });
    }
    g.finish();
}

criterion_group!(benches, step, reconstruction, backprop);
criterion_main!(benches);
