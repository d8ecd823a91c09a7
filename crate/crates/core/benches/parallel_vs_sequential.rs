use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use resdisc::config::{Profile, ScenarioFile};
use resdisc::par::Parallelism;
use resdisc::sim::run_scenarios;
use resdisc::verify::{run_all, VerifyOptions};

const MODES: [(&str, Parallelism); 2] = [
    ("sequential", Parallelism::Sequential),
    ("parallel", Parallelism::Parallel),
];

fn verify_suites(c: &mut Criterion) {
    let mut group = c.benchmark_group("verify");
    group.sample_size(10);
    for (name, parallelism) in MODES {
        let opts = VerifyOptions {
            seed: 1,
            trials: 200,
            profile: Profile::Test,
            parallelism,
            canary: false,
        };
        group.bench_function(BenchmarkId::new(name, opts.trials), |b| b.iter(|| run_all(&opts)));
    }
    group.finish();
}

fn scenario_sweep(c: &mut Criterion) {
    let file = ScenarioFile::parse(include_str!("../fixtures/detection.toml")).unwrap();
    let cfgs: Vec<_> = (0..16)
        .map(|seed| file.resolve(Profile::Demo, Some(seed)).unwrap())
        .collect();
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::new(name, cfgs.len()), |b| {
            b.iter(|| run_scenarios(&cfgs, mode))
        });
    }
    group.finish();
}

criterion_group!(benches, verify_suites, scenario_sweep);
criterion_main!(benches);
