use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mixreg_core::regularity::regularity_suite;
use mixreg_core::solver::solve_linear;
use mixreg_core::{assemble, Beyond, Domain, GridFunction, Kernel, Lattice, NonlocalOperator, SuiteOptions};

fn disc() -> Domain {
    Domain::ball([0.0, 0.0], 1.0, 2).unwrap()
}

fn apply_nonlocal(c: &mut Criterion) {
    let d = disc();
    let k = Kernel::fractional(1.5, 1.0, None, 2).unwrap();
    let lat = Lattice::covering(d.bounding_box(), 1.0 / 64.0, 2, 4);
    let op = NonlocalOperator::new(&k, &lat).unwrap();
    let u = GridFunction::from_fn(lat, |x| (1.0 - x[0] * x[0] - x[1] * x[1]).max(0.0), Beyond::Zero);
    c.bench_function("nonlocal apply h=1/64", |b| b.iter(|| black_box(op.apply(black_box(&u)))));
}

fn solve_mixed(c: &mut Criterion) {
    let d = disc();
    let k = Kernel::fractional(1.5, 1.0, None, 2).unwrap();
    let mut g = c.benchmark_group("mixed torsion");
    g.sample_size(10);
    g.bench_function("assemble and solve h=1/64", |b| {
        b.iter(|| {
            let op = assemble(&d, &k, 0.5, 1.0 / 64.0, 0.0).unwrap();
            black_box(solve_linear(&op, &|_| -1.0, Beyond::Zero).unwrap().residual)
        })
    });
    let op = assemble(&d, &k, 0.5, 1.0 / 64.0, 0.0).unwrap();
    let u = solve_linear(&op, &|_| -1.0, Beyond::Zero).unwrap().solution;
    g.bench_function("regularity suite h=1/64", |b| {
        b.iter(|| black_box(regularity_suite(&u, &d, SuiteOptions::for_domain(&d)).unwrap().lipschitz_estimate))
    });
    g.finish();
}

criterion_group!(benches, apply_nonlocal, solve_mixed);
criterion_main!(benches);
