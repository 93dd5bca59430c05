use criterion::{criterion_group, criterion_main, Criterion};
use pkd_core::exec::Exec;
use pkd_core::harness::{run_sweep, ExperimentConfig, ModelKind, SplitSizes};

fn small_sweep(exec: Exec) -> ExperimentConfig {
    ExperimentConfig {
        models: vec![ModelKind::Dnn, ModelKind::Pk],
        noise_grid: vec![0.0, 2.0],
        n_repeats: 4,
        sizes: SplitSizes {
            train: 500,
            valid: 50,
            test: 50,
        },
        exec,
        latency: pkd_core::harness::config::LatencyConfig {
            enabled: false,
            ..Default::default()
        },
        ..ExperimentConfig::default()
    }
}

fn bench_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for (name, exec) in [
        ("sequential", Exec::Sequential),
        ("parallel", Exec::Parallel),
    ] {
        let cfg = small_sweep(exec);
        group.bench_function(name, |b| b.iter(|| run_sweep(&cfg).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_sweep);
criterion_main!(benches);
