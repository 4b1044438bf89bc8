use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mmq_bench::{single_class, two_class};
use mmq_core::env_chain::{deviation_matrix, stationary_distribution};
use mmq_core::hjb::{solve_discounted, solve_ergodic, CostModel, SolverOptions};
use mmq_core::nalgebra::DMatrix;
use mmq_core::rng::stream;
use mmq_core::sim::{fluid_point, SimOptions};
use mmq_core::{DiffusionSpec, Grid, MarkovControl, SchedulingPolicy, Simulator};

fn env_analytics(c: &mut Criterion) {
    let k = 8;
    let q = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            -((k - 1) as f64)
        } else {
            1.0
        }
    });
    c.bench_function("stationary_distribution_k8", |b| b.iter(|| stationary_distribution(black_box(&q)).unwrap()));
    let pi = stationary_distribution(&q).unwrap();
    c.bench_function("deviation_matrix_k8", |b| b.iter(|| deviation_matrix(black_box(&q), &pi).unwrap()));
}

fn simulate(c: &mut Criterion) {
    let n = 400;
    let p = two_class(n);
    let x0 = fluid_point(n, &[0.5, 0.5]);
    let control = MarkovControl::constant(vec![0.5, 0.5]).unwrap();
    let mut group = c.benchmark_group("simulate_n400_t10");
    for (name, policy) in [
        ("static_priority", SchedulingPolicy::StaticPriority),
        ("omega_control", SchedulingPolicy::omega(control, 0.4)),
    ] {
        let sim = Simulator::new(&p, policy).unwrap();
        group.bench_function(name, |b| {
            b.iter(|| sim.run(10.0, &x0, &mut stream(1, 0), &SimOptions::default(), &mut ()).unwrap())
        });
    }
    group.finish();
}

fn hjb(c: &mut Criterion) {
    let cost = CostModel::Power { c: 1.0, m: 2.0 };
    let opts = SolverOptions::default();
    let spec1 = DiffusionSpec::from_derived(&single_class(100).derive().unwrap()).unwrap();
    let grid1 = Grid::symmetric(&[10.0], &[0.01]).unwrap();
    c.bench_function("hjb_ergodic_d1_2001", |b| b.iter(|| solve_ergodic(&spec1, &cost, &grid1, &opts).unwrap()));
    let spec2 = DiffusionSpec::from_derived(&two_class(100).derive().unwrap()).unwrap();
    let grid2 = Grid::symmetric(&[6.0, 6.0], &[0.2, 0.2]).unwrap();
    let mut group = c.benchmark_group("hjb_d2");
    group.sample_size(10);
    group.bench_function("discounted_61x61", |b| b.iter(|| solve_discounted(&spec2, &cost, 1.0, &grid2, &opts).unwrap()));
    group.finish();
}

criterion_group!(benches, env_analytics, simulate, hjb);
criterion_main!(benches);
