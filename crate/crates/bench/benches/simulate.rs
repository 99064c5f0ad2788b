use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use omas_bench::short_reference;
use omas_core::report::run_scenario;
use omas_core::simulate::Method;
use omas_core::RunOverrides;

fn integrators(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_reference_4s");
    group.sample_size(20);
    for (name, method) in [("exact", Method::Exact), ("rk4", Method::Rk4)] {
        for dt in [1e-2, 1e-3] {
            let mut s = short_reference(4.0, dt);
            s.simulation.method = method;
            group.bench_with_input(BenchmarkId::new(name, dt), &s, |b, s| {
                b.iter(|| run_scenario(s, &RunOverrides::default()).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, integrators);
criterion_main!(benches);
