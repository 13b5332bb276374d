use std::hint::black_box;

use adcr_core::jac::{JacConfig, JacModel, Trainable};
use adcr_core::metrics::{nsctr, sctr};
use adcr_core::pipeline::{
    plan_latency, run_experiment, Arm, ExperimentConfig, Models, OracleAdScorer, StageCosts,
};
use adcr_core::simworld::{generate_log, generate_world, CreativePolicy, NoisyOracleRanker, OracleRanker};
use adcr_core::{Architecture, ArchitecturePlan, WorldConfig};
use criterion::{criterion_group, criterion_main, Criterion};

fn small_world() -> adcr_core::World {
    generate_world(&WorldConfig {
        num_users: 200,
        num_ads: 200,
        warmup_impressions_per_user: 50,
        ..WorldConfig::default()
    })
    .unwrap()
}

fn world(c: &mut Criterion) {
    let cfg = WorldConfig::default();
    c.bench_function("generate_world/default", |b| b.iter(|| generate_world(black_box(&cfg)).unwrap()));
}

fn replay(c: &mut Criterion) {
    let w = small_world();
    let log = generate_log(&w, &CreativePolicy::UniformRandom, 100_000, 1).unwrap();
    let ranker = NoisyOracleRanker::new(&w, 0.5, 1);
    c.bench_function("sctr/100k", |b| b.iter(|| sctr(black_box(&log), &ranker).unwrap()));
    c.bench_function("nsctr/100k", |b| b.iter(|| nsctr(black_box(&log), &ranker).unwrap()));
}

fn train(c: &mut Criterion) {
    let w = small_world();
    let log = generate_log(&w, &CreativePolicy::UniformRandom, 512, 2).unwrap();
    let mut model = JacModel::new(&JacConfig::default()).unwrap();
    let batch: Vec<_> = log.iter().map(|r| model.make_example(&w, r).unwrap()).collect();
    c.bench_function("jac/train_step/512", |b| b.iter(|| model.train_step(black_box(&batch)).unwrap()));
}

fn serve(c: &mut Criterion) {
    let w = small_world();
    let oracle = OracleRanker(&w);
    let models = Models {
        ad: Some(&OracleAdScorer),
        creative_aware_ad: None,
        creative: Some(&oracle),
    };
    let arms = [Arm {
        name: "peri-cr",
        plan: ArchitecturePlan::new(Architecture::PeriCr, StageCosts::default()),
        models,
    }];
    let cfg = ExperimentConfig {
        num_requests: 1000,
        ..ExperimentConfig::default()
    };
    c.bench_function("run_experiment/1k_requests", |b| b.iter(|| run_experiment(&arms, &w, &cfg).unwrap()));
    let plan = ArchitecturePlan::new(Architecture::PreCr, StageCosts::default());
    c.bench_function("plan_latency", |b| b.iter(|| plan_latency(black_box(&plan), 1000, 5, 4).unwrap()));
}

criterion_group!(benches, world, replay, train, serve);
criterion_main!(benches);
