use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use smoothquad::estimators::{price, IntegrandKind, MethodConfig, PricingPlan};
use smoothquad::hierarchy::PathGrid;
use smoothquad::models::{GbmSpec, HestonSpec, Model, VolScheme};
use smoothquad::par;
use smoothquad::payoffs::{make_call, make_digital};
use smoothquad::smoothing::SmoothingConfig;

fn gbm_digital_plan() -> PricingPlan {
    PricingPlan {
        model: Model::Gbm(GbmSpec::single(100.0, 0.4, 0.0)),
        payoff: make_digital(100.0).unwrap(),
        grid: PathGrid::new(8, 1.0, 1).unwrap(),
        kind: IntegrandKind::Smoothed,
        method: MethodConfig::Rqmc { n_points: 128, n_shifts: 4 },
        smoothing: SmoothingConfig::default(),
        richardson_level: 0,
        seed: 11,
    }
}

fn heston_call_plan() -> PricingPlan {
    PricingPlan {
        model: Model::Heston(HestonSpec {
            s0: 100.0,
            v0: 0.04,
            mu: 0.0,
            rho: -0.9,
            kappa: 1.0,
            xi: 0.1,
            theta: 0.0025,
            scheme: VolScheme::FullTruncation,
        }),
        payoff: make_call(100.0).unwrap(),
        grid: PathGrid::new(8, 1.0, 1).unwrap(),
        kind: IntegrandKind::Raw,
        method: MethodConfig::Mc { n_samples: 50_000, batch_size: 8192 },
        smoothing: SmoothingConfig::default(),
        richardson_level: 0,
        seed: 11,
    }
}

fn thread_counts() -> Vec<usize> {
    let max = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut counts = vec![1];
    if max > 1 {
        counts.push(max);
    }
    counts
}

fn bench_smoothed_rqmc(c: &mut Criterion) {
    let plan = gbm_digital_plan();
    let mut group = c.benchmark_group("smoothed-rqmc-digital-gbm");
    group.sample_size(10);
    for threads in thread_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &t| {
            b.iter(|| par::with_threads(Some(t), || price(&plan).unwrap()))
        });
    }
    group.finish();
}

fn bench_raw_mc(c: &mut Criterion) {
    let plan = heston_call_plan();
    let mut group = c.benchmark_group("raw-mc-heston-call");
    group.sample_size(10);
    for threads in thread_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &t| {
            b.iter(|| par::with_threads(Some(t), || price(&plan).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_smoothed_rqmc, bench_raw_mc);
criterion_main!(benches);
