use cfdnet::config::ExperimentConfig;
use cfdnet::gradsuite::run_suite;
use cfdnet::parallel::Execution;
use cfdnet::synth::{generate_synthetic_dataset, SynthParams};
use cfdnet::training::{evaluate_student, StereoModel};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn dataset(c: &mut Criterion) {
    let cfg = ExperimentConfig::default();
    let p = SynthParams::from_config(&cfg).unwrap();
    let mut g = c.benchmark_group("synth_dataset_16");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_synthetic_dataset(0, 16, &p, exec).unwrap())
        });
    }
    g.finish();
}

fn evaluation(c: &mut Criterion) {
    let cfg = ExperimentConfig::default();
    let p = SynthParams::from_config(&cfg).unwrap();
    let scenes = generate_synthetic_dataset(1, 8, &p, Execution::Sequential).unwrap();
    let model = StereoModel::<f32>::init(&cfg.matcher(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut g = c.benchmark_group("evaluate_student_8");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate_student(&model, &scenes, exec).unwrap())
        });
    }
    g.finish();
}

fn gradients(c: &mut Criterion) {
    let mut g = c.benchmark_group("gradsuite_2_rounds");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| run_suite(0, 2, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, dataset, evaluation, gradients);
criterion_main!(benches);
