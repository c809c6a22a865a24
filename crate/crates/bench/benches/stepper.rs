use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dinsys_bench::{fixture, solver};
use dinsys_core::stepper::run;
use dinsys_core::ProblemId;

fn full_runs(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_20_steps");
    group.sample_size(10);
    for id in [
        ProblemId::Oscillator,
        ProblemId::P1,
        ProblemId::P2,
        ProblemId::P3,
        ProblemId::P4,
    ] {
        let f = fixture(id, 32);
        let config = solver(20);
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{id:?}")),
            &config,
            |b, cfg| b.iter(|| run(&f.system, &f.u0, &f.v0, cfg).expect("bench run")),
        );
    }
    group.finish();
}

fn grid_scaling(c: &mut Criterion) {
    let mut group = c.benchmark_group("p1_grid_scaling");
    group.sample_size(10);
    for nodes in [16, 32, 64] {
        let f = fixture(ProblemId::P1, nodes);
        let config = solver(5);
        group.bench_with_input(BenchmarkId::from_parameter(nodes), &config, |b, cfg| {
            b.iter(|| run(&f.system, &f.u0, &f.v0, cfg).expect("bench run"))
        });
    }
    group.finish();
}

criterion_group!(benches, full_runs, grid_scaling);
criterion_main!(benches);
