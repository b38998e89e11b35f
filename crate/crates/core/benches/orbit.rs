//! Orbit enumeration and exponent fitting, rayon pool against one thread.
//! `cargo bench --no-default-features` runs the same cases on the sequential
//! fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pslab::cartan::{Functional, RootSubset};
use pslab::fixtures;
use pslab::orbit::{self, ExponentMethod, OrbitBall};
use pslab::shadows;

fn workload(len: usize) -> f64 {
    let gens = fixtures::f3().unwrap();
    let ball = OrbitBall::enumerate(&gens, len).unwrap();
    let phi = Functional::new(vec![1.0, 0.0]);
    let e = orbit::critical_exponent(&ball, &phi, ExponentMethod::CountRegression).unwrap();
    let mu = shadows::patterson_construct(&ball, &phi, e.delta_hat + 0.1, &RootSubset::single(3, 1).unwrap()).unwrap();
    mu.total()
}

#[cfg(feature = "parallel")]
fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("rayon-1".into(), one), ("rayon-default".into(), all)]
}

fn bench(c: &mut Criterion) {
    let mut group = c.benchmark_group("f3_orbit_pipeline");
    group.sample_size(10);
    for len in [7usize, 9] {
        #[cfg(feature = "parallel")]
        for (name, pool) in pools() {
            group.bench_with_input(BenchmarkId::new(name, len), &len, |b, &len| {
                b.iter(|| pool.install(|| workload(len)))
            });
        }
        #[cfg(not(feature = "parallel"))]
        group.bench_with_input(BenchmarkId::new("sequential", len), &len, |b, &len| {
            b.iter(|| workload(len))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
