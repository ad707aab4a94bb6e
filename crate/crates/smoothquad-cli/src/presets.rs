use crate::config::{Experiment, GridBlock, MethodBlock, ModelBlock, PayoffBlock, RunConfig};

pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub reference: f64,
    pub config: RunConfig,
}

fn gbm_single() -> ModelBlock {
    ModelBlock {
        kind: "gbm".into(),
        x0: Some(vec![100.0]),
        sigma: Some(vec![0.4]),
        drift: Some(vec![0.0]),
        rho: None,
        correlation: None,
        s0: None,
        v0: None,
        mu: None,
        kappa: None,
        xi: None,
        theta: None,
        scheme: None,
    }
}

fn heston(scheme: &str) -> ModelBlock {
    ModelBlock {
        kind: "heston".into(),
        x0: None,
        sigma: None,
        drift: None,
        rho: Some(-0.9),
        correlation: None,
        s0: Some(100.0),
        v0: Some(0.04),
        mu: Some(0.0),
        kappa: Some(1.0),
        xi: Some(0.1),
        theta: Some(0.0025),
        scheme: Some(scheme.into()),
    }
}

fn payoff(kind: &str) -> PayoffBlock {
    PayoffBlock {
        kind: kind.into(),
        strike: 100.0,
        weights: (kind == "basket-call").then(|| vec![0.25; 4]),
    }
}

fn asgq(budget: usize) -> MethodBlock {
    MethodBlock {
        kind: "asgq".into(),
        budget: Some(budget),
        tol: None,
        points: None,
        shifts: None,
        samples: None,
        batch: None,
    }
}

fn rqmc(points: u64, shifts: u32) -> MethodBlock {
    MethodBlock {
        kind: "rqmc".into(),
        budget: None,
        tol: None,
        points: Some(points),
        shifts: Some(shifts),
        samples: None,
        batch: None,
    }
}

fn price_config(
    model: ModelBlock,
    payoff: PayoffBlock,
    steps: usize,
    method: MethodBlock,
    richardson: u8,
) -> RunConfig {
    RunConfig {
        experiment: Experiment::Price,
        seed: Some(crate::config::DEFAULT_SEED),
        format: None,
        out: None,
        richardson: Some(richardson),
        model,
        payoff,
        grid: GridBlock { steps, horizon: 1.0 },
        method,
        smoothing: None,
        study: None,
    }
}

/// The five shipped example configurations: single-asset GBM digital and
/// call, the four-asset equicorrelated basket call, and the two Heston
/// payoffs, each with its published reference value.
pub fn all() -> Vec<Preset> {
    vec![
        Preset {
            name: "digital-gbm",
            summary: "GBM digital, sigma 0.4, K=100, N=8, smoothed ASGQ",
            reference: 0.42074,
            config: price_config(gbm_single(), payoff("digital"), 8, asgq(1000), 1),
        },
        Preset {
            name: "call-gbm",
            summary: "GBM call, sigma 0.4, K=100, N=8, smoothed ASGQ",
            reference: 15.8519,
            config: price_config(gbm_single(), payoff("call"), 8, asgq(1000), 1),
        },
        Preset {
            name: "basket-gbm-4d",
            summary: "4-asset basket call, sigma 0.4, rho 0.3, c=1/4, K=100, smoothed ASGQ",
            reference: 11.04,
            config: {
                let mut model = gbm_single();
                model.x0 = Some(vec![100.0; 4]);
                model.sigma = Some(vec![0.4; 4]);
                model.drift = Some(vec![0.0; 4]);
                model.rho = Some(0.3);
                price_config(model, payoff("basket-call"), 4, asgq(4000), 0)
            },
        },
        Preset {
            name: "digital-heston",
            summary: "Heston digital, full-truncation Euler, N=8, smoothed rQMC",
            reference: 0.5146,
            config: price_config(heston("full-truncation"), payoff("digital"), 8, rqmc(2048, 30), 1),
        },
        Preset {
            name: "heston-call",
            summary: "Heston call, OU-based variance, N=8, smoothed ASGQ",
            reference: 6.33254,
            config: price_config(heston("ou-based"), payoff("call"), 8, asgq(4000), 1),
        },
    ]
}

pub fn find(name: &str) -> Option<Preset> {
    all().into_iter().find(|p| p.name == name)
}

pub fn print_table() {
    println!("{:<15} {:>10}  {}", "preset", "reference", "configuration");
    for preset in all() {
        println!("{:<15} {:>10}  {}", preset.name, preset.reference, preset.summary);
    }
}

pub fn print_one(name: &str) -> Result<(), String> {
    let preset = find(name).ok_or_else(|| {
        let names: Vec<&str> = all().iter().map(|p| p.name).collect();
        format!("unknown preset {name:?} (shipped presets: {})", names.join(", "))
    })?;
    println!("# {} — {}", preset.name, preset.summary);
    println!("# reference value: {}", preset.reference);
    print!(
        "{}",
        toml::to_string_pretty(&preset.config).expect("presets serialize to TOML")
    );
    Ok(())
}
