use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use secrelay::config::{db_to_linear, NetworkConfig};
use secrelay::experiments::{run_sweep, SweepParam, SweepSpec};
use secrelay::parallel::Execution;
use secrelay::spca::SpcaOptions;

fn bench(c: &mut Criterion) {
    let base = NetworkConfig { seed: 1, ..NetworkConfig::with_budget(6, 2, db_to_linear(30.0)) };
    let spec = SweepSpec::new(SweepParam::QTotDb, vec![20.0, 30.0], 8, base);
    let opts = SpcaOptions::default();
    let mut group = c.benchmark_group("sweep_6x2_16_trials");
    group.sample_size(10);
    for (name, exec) in [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)] {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| run_sweep(&spec, &opts, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
