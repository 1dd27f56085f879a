use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use relfp_bench::{fixture, lyapunov};
use relfp_core::constants::kappa1_on_axis;
use relfp_core::functionals::FunctionalContext;
use relfp_core::matrix_checks::verify_matrices;
use relfp_core::solver::{Integrator, Splitting};

const SIZES: [(usize, usize); 2] = [(64, 128), (128, 256)];

fn operators(c: &mut Criterion) {
    let mut g = c.benchmark_group("operators");
    for (nx, np) in SIZES {
        let f = fixture(nx, np, Splitting::Lie);
        let mut out = vec![0.0; f.h.len()];
        let id = format!("{nx}x{np}");
        g.bench_with_input(BenchmarkId::new("transport_apply", &id), &f, |b, f| {
            b.iter(|| f.ops.transport.apply(black_box(&f.h), &mut out))
        });
        let mut out = vec![0.0; f.h.len()];
        g.bench_with_input(BenchmarkId::new("collision_apply", &id), &f, |b, f| {
            b.iter(|| f.ops.collision.apply(black_box(&f.h), &mut out))
        });
    }
    g.finish();
}

fn steps(c: &mut Criterion) {
    let mut g = c.benchmark_group("step");
    for (nx, np) in SIZES {
        for splitting in [Splitting::Lie, Splitting::Strang] {
            let f = fixture(nx, np, splitting);
            let mut integ = Integrator::new(&f.eq, &f.ops, &f.solver).expect("integrator");
            let mut h = f.h.clone();
            g.bench_function(
                BenchmarkId::new(format!("{splitting:?}"), format!("{nx}x{np}")),
                |b| b.iter(|| integ.step_relative(black_box(&mut h))),
            );
        }
    }
    g.finish();
}

fn diagnostics(c: &mut Criterion) {
    let f = fixture(128, 256, Splitting::Lie);
    let ctx = FunctionalContext::new(&f.eq, &f.ops, Some(lyapunov())).expect("context");
    c.bench_function("record_128x256", |b| {
        b.iter(|| ctx.record(0.0, black_box(&f.h)).expect("record"))
    });
}

fn checks(c: &mut Criterion) {
    let mut g = c.benchmark_group("checks");
    g.sample_size(10);
    g.bench_function("verify_matrices_d3_1000", |b| {
        b.iter(|| verify_matrices(3, 1000, 1).expect("checks"))
    });
    g.bench_function("kappa1_on_axis_c5", |b| {
        b.iter(|| kappa1_on_axis(black_box(5.0), 4001).expect("gap"))
    });
    g.finish();
}

criterion_group!(benches, operators, steps, diagnostics, checks);
criterion_main!(benches);
