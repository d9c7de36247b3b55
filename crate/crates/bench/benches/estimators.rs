//! Per-dataset costs of the user-facing statistics: point estimates,
//! confidence intervals, and test p-values.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use qhet_core::{
    estimate_tau2, interval, p_value, ApproxMethod, EffectEstimate, GSampler, IntervalMethod,
    Tau2Method, VarianceMode,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// A fixed batch of simulated meta-analyses (K = 10, n = 40, tau2 = 1).
fn batch(count: usize) -> Vec<Vec<EffectEstimate>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n_t, n_c) = (20u32, 20u32);
    let n_tilde = f64::from(n_t) * f64::from(n_c) / 40.0;
    let sampler = GSampler::new(38.0, n_tilde);
    (0..count)
        .map(|_| {
            (0..10)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let g = sampler.sample(&mut rng, 0.5 + z);
                    EffectEstimate {
                        g,
                        v2: qhet_core::var_g_conditional(g, n_t, n_c),
                        n_t,
                        n_c,
                    }
                })
                .collect()
        })
        .collect()
}

fn bench_points(c: &mut Criterion) {
    let datasets = batch(64);
    let mut group = c.benchmark_group("point");
    for method in Tau2Method::ALL {
        group.bench_function(method.to_string(), |b| {
            b.iter(|| {
                for data in &datasets {
                    black_box(estimate_tau2(black_box(data), method).unwrap());
                }
            })
        });
    }
    group.finish();
}

fn bench_intervals(c: &mut Criterion) {
    let datasets = batch(8);
    let mut group = c.benchmark_group("interval");
    group.sample_size(20);
    for method in IntervalMethod::ALL {
        group.bench_function(method.to_string(), |b| {
            b.iter(|| {
                for data in &datasets {
                    black_box(interval(black_box(data), method, 0.95).unwrap());
                }
            })
        });
    }
    group.finish();
}

fn bench_tests(c: &mut Criterion) {
    let datasets = batch(64);
    let mut group = c.benchmark_group("test");
    for method in ApproxMethod::ALL {
        group.bench_function(method.to_string(), |b| {
            b.iter(|| {
                for data in &datasets {
                    black_box(
                        p_value(black_box(data), method, VarianceMode::Conditional, 0.0).unwrap(),
                    );
                }
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_points, bench_intervals, bench_tests);
criterion_main!(benches);
