use bespoke_core::fields::GmmField;
use bespoke_core::loss::LossOptions;
use bespoke_core::scheme::{BaseKind, SchemeParams};
use bespoke_core::training::{loss_and_gradient, prepare_gt_batch, GradEngine, FIXED_STREAM};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn gradient(c: &mut Criterion) {
    let f = GmmField::testbed();
    let batch = prepare_gt_batch(&f, 64, 0, FIXED_STREAM, 1e-9, 1e-9).unwrap();
    let opts = LossOptions { global_error: false, ..LossOptions::default() };
    let mut group = c.benchmark_group("loss_gradient_b64");
    group.sample_size(20);
    for n in [5, 10] {
        let p = SchemeParams::identity(BaseKind::Rk2, n).unwrap();
        for engine in [GradEngine::ForwardSens, GradEngine::CentralFd] {
            let id = BenchmarkId::new(format!("{engine:?}"), n);
            group.bench_with_input(id, &p, |b, p| b.iter(|| loss_and_gradient(p, &f, &batch, engine, 1e-7, &opts).unwrap()));
        }
    }
    group.finish();
}

fn gt_batch(c: &mut Criterion) {
    let f = GmmField::testbed();
    let mut group = c.benchmark_group("gt_batch");
    group.sample_size(10);
    group.bench_function("b64_tol1e-9", |b| b.iter(|| prepare_gt_batch(&f, 64, 0, 2, 1e-9, 1e-9).unwrap()));
    group.finish();
}

criterion_group!(benches, gradient, gt_batch);
criterion_main!(benches);
