use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mtt_core::fixtures::{random_example, PIPELINE_WIDTHS};
use mtt_core::model::{BranchShape, ModelConfig, ModelSettings, MttParams};
use mtt_core::pipeline::TriExample;
use mtt_core::train::{batch_gradient, predict_all, Exec, InitSpec};

/// Daily-interval shapes: 105-day past, 84-day present, 21-day premonition.
fn daily_config() -> ModelConfig {
    let steps = [105, 84, 21];
    let branches = [0, 1, 2].map(|i| BranchShape {
        features: PIPELINE_WIDTHS[i],
        steps: steps[i],
    });
    ModelConfig::new(ModelSettings::default(), branches).unwrap()
}

fn batch(config: &ModelConfig, n: usize) -> Vec<TriExample> {
    (0..n as u64)
        .map(|s| random_example(config, 1 + s as u32 % 7, s))
        .collect()
}

fn bench_gradient(c: &mut Criterion) {
    let config = daily_config();
    let params = MttParams::new(config.clone(), InitSpec::default()).unwrap();
    let examples = batch(&config, 32);
    let refs: Vec<&TriExample> = examples.iter().collect();
    let mut g = c.benchmark_group("batch_gradient");
    g.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        g.bench_with_input(
            BenchmarkId::from_parameter(format!("{exec:?}")),
            &exec,
            |b, &exec| {
                b.iter(|| batch_gradient(black_box(&params), black_box(&refs), exec).unwrap())
            },
        );
    }
    g.finish();
}

fn bench_predict(c: &mut Criterion) {
    let config = daily_config();
    let params = MttParams::new(config.clone(), InitSpec::default()).unwrap();
    let examples = batch(&config, 64);
    let refs: Vec<&TriExample> = examples.iter().collect();
    let mut g = c.benchmark_group("predict_all");
    g.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        g.bench_with_input(
            BenchmarkId::from_parameter(format!("{exec:?}")),
            &exec,
            |b, &exec| b.iter(|| predict_all(black_box(&params), black_box(&refs), exec).unwrap()),
        );
    }
    g.finish();
}

criterion_group!(benches, bench_gradient, bench_predict);
criterion_main!(benches);
