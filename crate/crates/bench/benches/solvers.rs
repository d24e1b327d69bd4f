use std::hint::black_box;

use bespoke_core::fields::{GmmField, VelocityField};
use bespoke_core::scheme::{bespoke_sample, BaseKind, SchemeGrids, SmoothScaleTime};
use bespoke_core::solvers::{solve_adaptive, solve_fixed, StepKind};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn field_eval(c: &mut Criterion) {
    let f = GmmField::testbed();
    let x = [0.3, -1.1];
    c.bench_function("gmm_eval", |b| b.iter(|| f.eval(black_box(0.4), black_box(&x)).unwrap()));
    c.bench_function("gmm_jac_x", |b| b.iter(|| f.jac_x(black_box(0.4), black_box(&x)).unwrap()));
}

fn sampling(c: &mut Criterion) {
    let f = GmmField::testbed();
    let x0 = [0.3, -1.1];
    let mut group = c.benchmark_group("sample_nfe10");
    group.bench_function("plain_rk2", |b| b.iter(|| solve_fixed(&f, StepKind::Rk2, 5, black_box(&x0)).unwrap()));
    let id = SchemeGrids::identity(BaseKind::Rk2, 5).unwrap();
    group.bench_function("identity_rk2", |b| b.iter(|| bespoke_sample(&id, &f, black_box(&x0)).unwrap()));
    let g = SmoothScaleTime::sample_seeded(0, 1, 3)[0].grids(BaseKind::Rk2, 5).unwrap();
    group.bench_function("bespoke_rk2", |b| b.iter(|| bespoke_sample(&g, &f, black_box(&x0)).unwrap()));
    group.finish();
}

fn adaptive(c: &mut Criterion) {
    let f = GmmField::testbed();
    let x0 = [0.3, -1.1];
    let mut group = c.benchmark_group("adaptive");
    for tol in [1e-6, 1e-9, 1e-12] {
        group.bench_with_input(BenchmarkId::from_parameter(tol), &tol, |b, &tol| {
            b.iter(|| solve_adaptive(&f, black_box(&x0), tol, tol, 1.0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, field_eval, sampling, adaptive);
criterion_main!(benches);
