use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use extremeclust::exec::Exec;
use extremeclust::posterior::{point_estimate_with, similarity_matrix, swmc_marginals, Search};
use extremeclust::preprocess::dependence_counts;
use extremeclust::sampler::{run_chain, run_chains, ChainConfig, Model, MoveConfig};
use extremeclust::simgen::{simulate_study, Study};
use extremeclust::SeriesMatrix;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bench_posterior(c: &mut Criterion) {
    let d = simulate_study(Study::Three, 1).unwrap();
    let model = Model::new(d.spatial, d.exceedances, &d.counts).unwrap();
    let cfg = ChainConfig { iterations: 60_000, burn_in: 10_000, thin: 25, ..Default::default() };
    let trace = run_chain(&model, &cfg, &MoveConfig::default()).unwrap();

    let mut g = c.benchmark_group("posterior");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new("similarity", name), &exec, |b, &e| {
            b.iter(|| similarity_matrix(&trace, e).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("point_estimate", name), &exec, |b, &e| {
            b.iter(|| point_estimate_with(&trace, Search::Greedy, e).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("marginals", name), &exec, |b, &e| {
            b.iter(|| swmc_marginals(&trace, 0.9, e).unwrap())
        });
    }
    g.finish();
}

fn bench_counts(c: &mut Criterion) {
    let d = simulate_study(Study::One, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows: Vec<Vec<Option<f64>>> =
        (0..20).map(|_| (0..5000).map(|_| Some(rng.random::<f64>())).collect()).collect();
    let series = SeriesMatrix::from_rows(&rows).unwrap();
    let mut g = c.benchmark_group("dependence_counts");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| dependence_counts(&series, &d.spatial, 0.95, e).unwrap())
        });
    }
    g.finish();
}

fn bench_chains(c: &mut Criterion) {
    let d = simulate_study(Study::One, 1).unwrap();
    let model = Model::new(d.spatial, d.exceedances, &d.counts).unwrap();
    let cfgs: Vec<ChainConfig> = (1..=4)
        .map(|seed| ChainConfig { iterations: 5_000, burn_in: 1_000, thin: 10, seed, ..Default::default() })
        .collect();
    let mut g = c.benchmark_group("chains");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| run_chains(&model, &cfgs, &MoveConfig::default(), e))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_posterior, bench_counts, bench_chains);
criterion_main!(benches);
