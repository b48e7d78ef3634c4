use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use safezone::analysis::{brute_force_counts, uniform_configs, uniform_cross_check};
use safezone::harness::experiments::experiment1;
use safezone::harness::{run_on, ScenarioConfig, Selector, TopologySource, TrafficKind, TrafficSpec};
use safezone::par::{self, Exec};
use safezone::topology::{TaTree, TopologySpec, NGI_TOPOLOGY, THREE_LEVEL_30};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn cross_check(c: &mut Criterion) {
    let configs = uniform_configs(120, 2..=8);
    let mut g = c.benchmark_group("uniform_cross_check");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| uniform_cross_check(black_box(&configs), false, exec))
        });
    }
    g.finish();
}

fn enumeration(c: &mut Criterion) {
    let tree = TaTree::from_spec_text(NGI_TOPOLOGY).unwrap();
    let mut g = c.benchmark_group("brute_force_ngi");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| brute_force_counts(black_box(&tree), exec)));
    }
    g.finish();
}

fn curves(c: &mut Criterion) {
    let mut g = c.benchmark_group("experiment1_curves");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| experiment1(black_box(40_000), exec)));
    }
    g.finish();
}

fn seeded_runs(c: &mut Criterion) {
    let tree = Arc::new(TaTree::from_spec_text(THREE_LEVEL_30).unwrap());
    let seeds: Vec<u64> = (0..16).collect();
    let run = |seed: &u64| {
        let mut cfg = ScenarioConfig::new(TopologySource::Inline(TopologySpec::parse(THREE_LEVEL_30).unwrap()));
        cfg.seed = *seed;
        cfg.duration = 2000;
        cfg.traffic.push(TrafficSpec::new(Selector::Random, Selector::Random, 2000, TrafficKind::Legit));
        cfg.traffic.push(TrafficSpec::new(Selector::Random, Selector::Random, 500, TrafficKind::ForgedTag));
        run_on(tree.clone(), &cfg).unwrap().delivered
    };
    let mut g = c.benchmark_group("independent_runs");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| par::map(exec, black_box(&seeds), run)));
    }
    g.finish();
}

criterion_group!(benches, cross_check, enumeration, curves, seeded_runs);
criterion_main!(benches);
