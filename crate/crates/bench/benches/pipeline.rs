use std::hint::black_box;

use cgrelax::moments::solve_relaxation;
use cgrelax::{assemble_relaxation, envelope_value, EnvelopeMethod, SolveOptions};
use cgrelax_bench::problem;
use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DMatrix;

fn envelope(c: &mut Criterion) {
    let spec = problem("svk_linear_bc.json");
    let aniso = problem("anisotropic.json");
    let f = DMatrix::from_row_slice(2, 2, &[1.15, 0.65, 0.65, 1.15]);
    let opts = SolveOptions::default();
    let mut g = c.benchmark_group("envelope");
    g.bench_function("spectral", |b| {
        b.iter(|| {
            envelope_value(black_box(&f), &spec.energy, EnvelopeMethod::Spectral, &opts).unwrap()
        })
    });
    g.bench_function("projection_svk", |b| {
        b.iter(|| {
            envelope_value(
                black_box(&f),
                &spec.energy,
                EnvelopeMethod::Projection,
                &opts,
            )
            .unwrap()
        })
    });
    g.bench_function("projection_anisotropic", |b| {
        b.iter(|| {
            envelope_value(
                black_box(&f),
                &aniso.energy,
                EnvelopeMethod::Projection,
                &opts,
            )
            .unwrap()
        })
    });
    g.finish();
}

fn assembly(c: &mut Criterion) {
    let spec = problem("svk_quadratic_bc.json");
    let radius = spec.initial_radius();
    let mut g = c.benchmark_group("assemble");
    for r in [2, 3] {
        g.bench_function(format!("quadratic_order_{r}"), |b| {
            b.iter(|| assemble_relaxation(black_box(&spec), r, radius).unwrap())
        });
    }
    g.finish();
}

fn solve(c: &mut Criterion) {
    let opts = SolveOptions::default();
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    for name in ["svk_linear_bc.json", "svk_quadratic_bc.json"] {
        let spec = problem(name);
        let radius = spec.initial_radius();
        g.bench_function(name.trim_end_matches(".json"), |b| {
            b.iter(|| solve_relaxation(black_box(&spec), 2, radius, &opts).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, envelope, assembly, solve);
criterion_main!(benches);
