use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use clearing_bench::{rational_suite, suite, two_asset_suite};
use clearing_core::solver_reference::ReferenceOptions;
use clearing_core::{extract_rational, solve_convex, solve_tatonnement, solve_two_asset, SolveOptions, TatonnementOptions};

fn convex(c: &mut Criterion) {
    let mut group = c.benchmark_group("convex");
    group.sample_size(10);
    for (name, inst) in suite() {
        group.bench_function(&name, |b| b.iter(|| solve_convex(black_box(&inst), &SolveOptions::default())));
    }
    group.finish();
}

fn demand_query(c: &mut Criterion) {
    let mut group = c.benchmark_group("two_asset");
    group.sample_size(10);
    for (name, inst) in two_asset_suite() {
        group.bench_function(format!("tatonnement/{name}"), |b| b.iter(|| solve_tatonnement(black_box(&inst), &TatonnementOptions::default())));
        let coarse = ReferenceOptions { grid_points: 10_000, ..ReferenceOptions::default() };
        group.bench_function(format!("reference/{name}"), |b| b.iter(|| solve_two_asset(black_box(&inst), &coarse)));
    }
    group.finish();
}

fn rational(c: &mut Criterion) {
    let mut group = c.benchmark_group("rational");
    group.sample_size(10);
    for (name, inst) in rational_suite() {
        let Ok(sol) = solve_convex(&inst, &SolveOptions::default()) else { continue };
        let prices = sol.prices.values().to_vec();
        group.bench_function(&name, |b| b.iter(|| extract_rational(black_box(&inst), &prices)));
    }
    group.finish();
}

criterion_group!(benches, convex, demand_query, rational);
criterion_main!(benches);
