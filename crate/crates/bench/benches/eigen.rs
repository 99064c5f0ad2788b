use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use omas_bench::{reference_matrices, ring_matrix};
use omas_core::linalg;

fn spectra(c: &mut Criterion) {
    let mut group = c.benchmark_group("spectrum");
    for mm in reference_matrices() {
        group.bench_with_input(
            BenchmarkId::new("reference_mode", mm.mode_id.0),
            &mm.a_tilde,
            |b, a| b.iter(|| linalg::spectral_abscissa(black_box(a)).unwrap()),
        );
    }
    for n in [8, 16, 32, 64] {
        let a = ring_matrix(n, 3).a_tilde;
        group.bench_with_input(BenchmarkId::new("ring_agents", n), &a, |b, a| {
            b.iter(|| linalg::eigenvalues(black_box(a)).unwrap())
        });
    }
    group.finish();
}

fn kronecker(c: &mut Criterion) {
    let f = ring_matrix(8, 5).a_tilde;
    let g = ring_matrix(4, 6).a_tilde;
    c.bench_function("kron_sum_spectrum_16x8", |b| {
        b.iter(|| linalg::eigenvalues(&linalg::kron_sum(black_box(&f), black_box(&g))).unwrap())
    });
}

criterion_group!(benches, spectra, kronecker);
criterion_main!(benches);
