//! Hot paths at working resolution: one variational step, one exact
//! transport distance, one implicit reference step. Warm starts are set up
//! outside the timed closures, so each sample measures a single kernel call
//! on fixed inputs.

use criterion::{criterion_group, criterion_main, Criterion};
use jkolab_core::*;

fn unit_grid(n: usize) -> Grid1D {
    Grid1D::new(0.0, 1.0, n).unwrap()
}

fn instance(n: usize) -> (Potential, Density) {
    let v = PotentialFamily::Quadratic { center: 0.5, strength: 4.0 }
        .realize(unit_grid(n))
        .unwrap();
    let rho = DensityFamily::Cosine { amplitude: 0.3, frequency: 1 }
        .realize(unit_grid(n), &v, DEFAULT_FLOOR)
        .unwrap();
    (v, rho)
}

fn bench_jko_step(c: &mut Criterion) {
    let (v, rho) = instance(256);
    let cfg = JkoConfig::new(1e-3, 1024).unwrap();
    c.bench_function("jko_step_n256_m1024", |b| {
        b.iter(|| jko_step(&rho, &v, &cfg).unwrap())
    });
}

fn bench_w2_distance(c: &mut Criterion) {
    let (v, rho) = instance(512);
    let gibbs = gibbs_density(&v, DEFAULT_FLOOR).unwrap();
    c.bench_function("w2_distance_n512", |b| {
        b.iter(|| w2_distance(&rho, &gibbs).unwrap())
    });
}

fn bench_fp_step(c: &mut Criterion) {
    let (v, rho) = instance(512);
    c.bench_function("fp_step_n512", |b| b.iter(|| fp_step(&rho, &v, 1e-5).unwrap()));
}

criterion_group!(kernels, bench_jko_step, bench_w2_distance, bench_fp_step);
criterion_main!(kernels);
