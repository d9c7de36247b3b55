//! Null-distribution machinery: the weighted chi-square series, the
//! eigenvalue path from data to mixture, and the corrected degrees of
//! freedom.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use qhet_core::{
    corrected_null_df, ess_mixture_cdf, farebrother_cdf, iv_mixture_cdf, mixture_from_q,
    ChiSquareMixture, EffectEstimate, VarianceMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dataset(k: usize, seed: u64) -> Vec<EffectEstimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| {
            let n_t = rng.gen_range(10..60);
            let n_c = rng.gen_range(10..60);
            EffectEstimate {
                g: rng.gen_range(-1.0..1.0),
                v2: rng.gen_range(0.05..0.3),
                n_t,
                n_c,
            }
        })
        .collect()
}

fn bench_series(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let lambdas: Vec<f64> = (0..10).map(|_| rng.gen_range(0.2..3.0)).collect();
    let mix = ChiSquareMixture::new(lambdas).unwrap();
    let mut group = c.benchmark_group("series");
    group.bench_function("farebrother_cdf/center", |b| {
        b.iter(|| farebrother_cdf(black_box(&mix), black_box(12.0), 1e-10).unwrap())
    });
    group.bench_function("farebrother_cdf/tail", |b| {
        b.iter(|| farebrother_cdf(black_box(&mix), black_box(45.0), 1e-10).unwrap())
    });
    group.finish();
}

fn bench_mixture_path(c: &mut Criterion) {
    let mut group = c.benchmark_group("mixture");
    for k in [10usize, 30] {
        let data = dataset(k, 2);
        let w: Vec<f64> = data.iter().map(|e| e.n_tilde()).collect();
        let sigma2: Vec<f64> = data.iter().map(|e| e.v2).collect();
        group.bench_function(format!("eigenvalues/k{k}"), |b| {
            b.iter(|| mixture_from_q(black_box(&w), black_box(&sigma2), 0.0).unwrap())
        });
        group.bench_function(format!("ess_cdf/k{k}"), |b| {
            b.iter(|| {
                ess_mixture_cdf(
                    black_box(&data),
                    0.0,
                    VarianceMode::Conditional,
                    black_box(12.0),
                    1e-10,
                )
                .unwrap()
            })
        });
        group.bench_function(format!("iv_cdf/k{k}"), |b| {
            b.iter(|| iv_mixture_cdf(black_box(&data), 0.0, black_box(12.0), 1e-10).unwrap())
        });
    }
    group.finish();
}

fn bench_corrected_df(c: &mut Criterion) {
    let data = dataset(10, 3);
    // Prime the per-arm-size quadrature cache so the benchmark measures the
    // steady state, not the one-off table build.
    corrected_null_df(&data).unwrap();
    c.bench_function("corrected_df/k10_warm", |b| {
        b.iter(|| corrected_null_df(black_box(&data)).unwrap())
    });
}

criterion_group!(benches, bench_series, bench_mixture_path, bench_corrected_df);
criterion_main!(benches);
