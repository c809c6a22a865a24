use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use dinsys_bench::{dual_probe, fixture};
use dinsys_core::convex::{conjugate_numeric, psi1_conjugate, psi_conjugate};
use dinsys_core::ProblemId;

fn conjugates(c: &mut Criterion) {
    let f = fixture(ProblemId::P1, 32);
    let dissipation = &f.system.dissipation;
    let xi = dual_probe(f.system.dim(), 0.5);

    c.bench_function("psi1_conjugate_closed_form", |b| {
        b.iter(|| psi1_conjugate(dissipation, black_box(&xi)).expect("conjugate"))
    });
    c.bench_function("psi_conjugate_quadratic_plus_power", |b| {
        b.iter(|| psi_conjugate(dissipation, black_box(&xi), 1e-10).expect("conjugate"))
    });
    c.bench_function("conjugate_numeric_dissipation", |b| {
        b.iter(|| conjugate_numeric(dissipation, black_box(&xi), 1e-10).expect("conjugate"))
    });
}

criterion_group!(benches, conjugates);
criterion_main!(benches);
