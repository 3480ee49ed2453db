//! Sequential vs rayon paths of the hot kernels.
//!
//! Without the `parallel` feature only the sequential variants are timed.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use dsparse_core::eval::rank_queries;
use dsparse_core::kernels;
use dsparse_core::kg::{generate_toy_kg, Split};
use dsparse_core::model::{DSparsE, ModelConfig};
use dsparse_core::Real;

fn filled(len: usize, k: Real) -> Vec<Real> {
    (0..len).map(|i| (i as Real * k).sin()).collect()
}

fn matmul_nt(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul_nt");
    for &(m, n, p) in &[(128usize, 64usize, 1000usize), (512, 128, 4000)] {
        let a = filled(m * n, 0.37);
        let b = filled(p * n, 0.11);
        let id = format!("{m}x{n}x{p}");
        group.bench_with_input(BenchmarkId::new("seq", &id), &(), |bch, _| {
            bch.iter(|| kernels::matmul_nt_seq(black_box(&a), black_box(&b), m, n, p))
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("par", &id), &(), |bch, _| {
            bch.iter(|| kernels::matmul_nt_par(black_box(&a), black_box(&b), m, n, p))
        });
    }
    group.finish();
}

fn matmul_tn(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul_tn");
    let (m, n, p) = (512usize, 128usize, 256usize);
    let a = filled(m * n, 0.21);
    let b = filled(m * p, 0.05);
    group.bench_function("seq", |bch| bch.iter(|| kernels::matmul_tn_seq(black_box(&a), black_box(&b), m, n, p)));
    #[cfg(feature = "parallel")]
    group.bench_function("par", |bch| bch.iter(|| kernels::matmul_tn_par(black_box(&a), black_box(&b), m, n, p)));
    group.finish();
}

// End-to-end: whichever path the crate was built with.
fn predict_and_rank(c: &mut Criterion) {
    let kg = generate_toy_kg(400, 1).expect("toy graph");
    let model = DSparsE::new(ModelConfig {
        n_entities: kg.n_entities(),
        n_relations: kg.n_relations(),
        ..ModelConfig::default()
    })
    .expect("model");
    let queries = kg.queries(Split::Train);
    let label = if cfg!(feature = "parallel") { "par" } else { "seq" };
    let mut group = c.benchmark_group("model");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("rank_train_queries", label), |b| {
        b.iter(|| rank_queries(&model, black_box(&queries), kg.truth()).expect("ranks"))
    });
    group.finish();
}

criterion_group!(benches, matmul_nt, matmul_tn, predict_and_rank);
criterion_main!(benches);
