use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hetcon_core::matstack::{max_singular_value, pseudo_inverse, spectral_radius};
use hetcon_core::scenarios;
use hetcon_core::sim::run_distributed;
use hetcon_core::synthesis::{build_error_stack, solve_dare, synthesize};
use hetcon_core::SimOptions;

fn kernels(c: &mut Criterion) {
    let s = scenarios::reference();
    let synth = synthesize(&s).unwrap();
    let a_c = synth.a_c.clone();
    c.bench_function("spectral_radius A_c", |b| {
        b.iter(|| spectral_radius(black_box(&a_c)).unwrap())
    });
    c.bench_function("sigma_max A_c", |b| {
        b.iter(|| max_singular_value(black_box(&a_c)))
    });
    c.bench_function("pseudo_inverse A_c", |b| {
        b.iter(|| pseudo_inverse(black_box(&a_c)))
    });

    let pm = s.validate().unwrap();
    let stack = build_error_stack(&s, &pm);
    c.bench_function("blockwise DARE", |b| {
        b.iter(|| solve_dare(black_box(&stack), &s.tolerances).unwrap())
    });

    let opts = SimOptions::from_scenario(&s);
    c.bench_function("distributed run 60 steps", |b| {
        b.iter(|| run_distributed(black_box(&s), &synth, &opts).unwrap())
    });
}

fn synthesis(c: &mut Criterion) {
    let mut s = scenarios::reference();
    // capped observer search budget
    s.tolerances.observer_max_evals = 1000;
    s.tolerances.observer_restarts = 1;
    let mut g = c.benchmark_group("synthesis");
    g.sample_size(10);
    g.bench_function("reference scenario, 1000 evaluations", |b| {
        b.iter(|| synthesize(black_box(&s)).unwrap())
    });
    g.finish();
}

criterion_group!(benches, kernels, synthesis);
criterion_main!(benches);
