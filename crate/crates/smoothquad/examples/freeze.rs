use std::time::Instant;

use smoothquad::analysis::statistical_error_study;
use smoothquad::estimators::{price, richardson, IntegrandKind, PricingPlan};
use smoothquad::hierarchy::PathGrid;
use smoothquad::models::{GbmSpec, Model};
use smoothquad::payoffs::make_digital;
use smoothquad::quadrature::AsgqConfig;
use smoothquad::estimators::MethodConfig;

fn digital_plan(seed: u64, method: MethodConfig) -> PricingPlan {
    PricingPlan {
        model: Model::Gbm(GbmSpec::single(100.0, 0.4, 0.0)),
        payoff: make_digital(100.0).unwrap(),
        grid: PathGrid::new(8, 1.0, 1).unwrap(),
        kind: IntegrandKind::Smoothed,
        method,
        smoothing: Default::default(),
        richardson_level: 0,
        seed,
    }
}

fn main() {
    let reference = 0.42074029056089696;

    eprintln!("== digital rich1 budget 500 after fast path ==");
    let t = Instant::now();
    let mut plan = digital_plan(
        20240819,
        MethodConfig::Asgq(AsgqConfig {
            budget: 500,
            ..Default::default()
        }),
    );
    plan.richardson_level = 1;
    let est = richardson(&plan).unwrap();
    eprintln!(
        "  value={:.9} rel={:.4}% work={} {:.2}s",
        est.value,
        (est.value / reference - 1.0).abs() * 100.0,
        est.work,
        t.elapsed().as_secs_f64()
    );

    let grid: Vec<u64> = (6..=14).map(|k| 1u64 << k).collect();
    for shifts in [30u32, 16] {
        for seed in [20240819u64, 1, 2, 3] {
            let t = Instant::now();
            let plan = digital_plan(
                seed,
                MethodConfig::Rqmc {
                    n_points: 64,
                    n_shifts: shifts,
                },
            );
            let study = statistical_error_study(&plan, &grid).unwrap();
            let s = study.series("ci-half-width").unwrap();
            let smoothed_t = t.elapsed().as_secs_f64();

            let t = Instant::now();
            let mut raw = digital_plan(
                seed,
                MethodConfig::Rqmc {
                    n_points: 64,
                    n_shifts: shifts,
                },
            );
            raw.kind = IntegrandKind::Raw;
            let raw_study = statistical_error_study(&raw, &grid).unwrap();
            let r = raw_study.series("ci-half-width").unwrap();
            eprintln!(
                "  shifts={shifts} seed={seed}: smoothed slope={:.4} r2={:.3} ({:.1}s) | raw slope={:.4} r2={:.3} ({:.1}s)",
                s.slope.unwrap(),
                s.r_squared.unwrap(),
                smoothed_t,
                r.slope.unwrap(),
                r.r_squared.unwrap(),
                t.elapsed().as_secs_f64()
            );
        }
    }

    eprintln!("== asgq digital plain budgets after fast path (timing) ==");
    let t = Instant::now();
    let plan = digital_plan(
        20240819,
        MethodConfig::Asgq(AsgqConfig {
            budget: 1000,
            ..Default::default()
        }),
    );
    let est = price(&plan).unwrap();
    eprintln!(
        "  plain budget 1000: value={:.9} rel={:.4}% work={} {:.2}s",
        est.value,
        (est.value / reference - 1.0).abs() * 100.0,
        est.work,
        t.elapsed().as_secs_f64()
    );
}
