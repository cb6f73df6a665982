use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use empnull::bias::MixtureScenario;
use empnull::covariance::{bootstrap_cov, BootstrapConfig};
use empnull::par::Execution;
use empnull::sim::{generate, pipeline_for, run_sweep, IntervalCentre, SweepAxis, SweepConfig};

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

fn bootstrap(c: &mut Criterion) {
    let scenario = MixtureScenario::normal_shift(0.9).unwrap();
    let stats = generate(&scenario, 10_000, 7);
    let pipeline = pipeline_for(&scenario, 0.1, 1.5, IntervalCentre::Zero).unwrap();
    let mut group = c.benchmark_group("bootstrap_200");
    group.sample_size(10);
    for (name, execution) in modes() {
        let cfg = BootstrapConfig { replicates: 200, seed: 7, execution };
        group.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| bootstrap_cov(&stats, &pipeline, cfg).unwrap())
        });
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("t0_sweep_4x50");
    group.sample_size(10);
    for (name, execution) in modes() {
        let cfg = SweepConfig {
            scenario: MixtureScenario::chisq_noncentral(0.9).unwrap(),
            n: 10_000,
            reps: 50,
            axis: SweepAxis::FitInterval,
            grid: vec![3.0, 4.0, 5.0, 6.0],
            fixed_other: 0.1,
            centre: IntervalCentre::NullMean,
            seed: 7,
            execution,
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| b.iter(|| run_sweep(cfg).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bootstrap, sweep);
criterion_main!(benches);
