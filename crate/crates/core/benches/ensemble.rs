use balwalk::env::{EnvironmentSpec, KappaField};
use balwalk::harness::{dispatch, ExperimentConfig, ExperimentId};
use balwalk::kernel::{JumpKernelSampler, KernelMode};
use balwalk::par::Workers;
use balwalk::walker::{ensemble, EnsembleConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

const MODES: [(&str, Workers); 2] = [("sequential", Workers::SEQUENTIAL), ("parallel", Workers::ALL)];

fn walk_ensemble(c: &mut Criterion) {
    let field = KappaField::new(EnvironmentSpec::uniform(2, 1.0, 0.5, 1.5, 2024)).unwrap();
    let sampler = JumpKernelSampler::with_defaults(2, 1.0, KernelMode::ExactInfinite).unwrap();
    let cfg = EnsembleConfig {
        n: 32,
        sample_times: vec![1.0],
        trajectories: 2000,
        label: 0,
        max_events: None,
    };
    let mut group = c.benchmark_group("ensemble");
    group.sample_size(10);
    for (name, workers) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| ensemble(&field, &sampler, black_box(&cfg), workers).unwrap())
        });
    }
    group.finish();
}

fn sampler_gof(c: &mut Criterion) {
    let mut cfg = ExperimentConfig::default_for(ExperimentId::SamplerGof);
    cfg.gof.draws = 500_000;
    let field = KappaField::new(cfg.environment.clone()).unwrap();
    let mut group = c.benchmark_group("sampler_gof");
    group.sample_size(10);
    for (name, workers) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| dispatch(black_box(&cfg), &field, workers).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, walk_ensemble, sampler_gof);
criterion_main!(benches);
