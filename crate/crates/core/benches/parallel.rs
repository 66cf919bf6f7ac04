use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use awm::eval::{evaluate, Driver, EvalConfig};
use awm::nn::{ModelParams, NetConfig};
use awm::parallel::Workers;
use awm::scenario::{generate_suite, ScenarioKind};
use awm::train::{train_policy, TrainConfig};

fn workers() -> Vec<(&'static str, Workers)> {
    let threads = std::thread::available_parallelism().map_or(2, |n| n.get()).max(2);
    vec![
        ("sequential", Workers::sequential()),
        ("parallel", Workers::new(threads).expect("positive")),
    ]
}

fn bench_eval(c: &mut Criterion) {
    let data = generate_suite(
        &[
            ScenarioKind::Straight,
            ScenarioKind::Arc,
            ScenarioKind::SCurve,
            ScenarioKind::StopGo,
        ],
        16,
        0,
    );
    let params = ModelParams::init(NetConfig::default(), 0);
    let cfg = EvalConfig {
        rollouts: 4,
        ..EvalConfig::default()
    };
    let mut g = c.benchmark_group("evaluate");
    g.sample_size(10);
    for (name, w) in workers() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &w, |b, w| {
            b.iter(|| evaluate(Driver::Policy(&params), &data, &cfg, w).unwrap())
        });
    }
    g.finish();
}

fn bench_apg_epoch(c: &mut Criterion) {
    let data = generate_suite(&[ScenarioKind::Straight, ScenarioKind::Arc], 16, 0);
    let cfg = TrainConfig {
        policy_epochs: 1,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let mut g = c.benchmark_group("apg_epoch");
    g.sample_size(10);
    for (name, w) in workers() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &w, |b, w| {
            b.iter(|| {
                let mut p = ModelParams::init(NetConfig::default(), 0);
                train_policy(&mut p, &data, &cfg, w, |_, _, _| None).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bench_eval, bench_apg_epoch);
criterion_main!(benches);
