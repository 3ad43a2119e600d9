use std::collections::HashMap;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use eqa_core::dataset::{generate, generate_world, CategoryCounts, TemplateSet, WorldGenOptions};
use eqa_core::environment::WorldTruth;
use eqa_core::evaluation::{run_benchmark, BenchmarkConfig};

fn corpus() -> (HashMap<String, WorldTruth>, Vec<eqa_core::dataset::QARecord>) {
    let mut worlds = HashMap::new();
    let mut records = Vec::new();
    for seed in 0..6u64 {
        let id = format!("bench{seed}");
        let opts = WorldGenOptions { occlusion_rate: 0.2, close_only_rate: 0.2, ..Default::default() };
        let world = WorldTruth::from_world_file(&generate_world(&id, seed, &opts), &id).unwrap();
        records.extend(generate(&world, &TemplateSet::default(), seed, &CategoryCounts::uniform(15)));
        worlds.insert(id, world);
    }
    (worlds, records)
}

fn bench_run(c: &mut Criterion) {
    let (worlds, records) = corpus();
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get()).max(2);
    let mut group = c.benchmark_group("run_benchmark");
    group.sample_size(10);
    for workers in [1, threads] {
        let config = BenchmarkConfig { workers, ..BenchmarkConfig::default() };
        let name = if workers == 1 { "sequential" } else { "parallel" };
        group.bench_with_input(BenchmarkId::new(name, workers), &config, |b, config| {
            b.iter(|| run_benchmark(&records, &worlds, config))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_run);
criterion_main!(benches);
