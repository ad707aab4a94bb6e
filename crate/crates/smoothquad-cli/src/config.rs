use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smoothquad::estimators::{IntegrandKind, MethodConfig, PricingPlan};
use smoothquad::hierarchy::PathGrid;
use smoothquad::models::{GbmSpec, HestonSpec, Model, VolScheme};
use smoothquad::payoffs::{make_basket_call, make_call, make_digital, PayoffSpec};
use smoothquad::quadrature::AsgqConfig;
use smoothquad::smoothing::{NodeRule, SmoothingConfig};

pub const DEFAULT_SEED: u64 = 20240819;

/// What a run computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Price,
    QuadStudy,
    StatStudy,
    WeakError,
    MixedDiff,
    SmoothingStudy,
    DecayProbe,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Experiment::Price => "price",
            Experiment::QuadStudy => "quad-study",
            Experiment::StatStudy => "stat-study",
            Experiment::WeakError => "weak-error",
            Experiment::MixedDiff => "mixed-diff",
            Experiment::SmoothingStudy => "smoothing-study",
            Experiment::DecayProbe => "decay-probe",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FileFormat {
    Csv,
    Jsonl,
}

impl FileFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FileFormat::Csv => "csv",
            FileFormat::Jsonl => "jsonl",
        }
    }
}

/// One experiment as written in a config file. Scalar keys first, then the
/// nested blocks, so the echo serializes back to valid TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<FileFormat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub richardson: Option<u8>,
    pub model: ModelBlock,
    pub payoff: PayoffBlock,
    pub grid: GridBlock,
    pub method: MethodBlock,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<SmoothingBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub study: Option<StudyBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ModelBlock {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PayoffBlock {
    pub kind: String,
    pub strike: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GridBlock {
    pub steps: usize,
    pub horizon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct MethodBlock {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shifts: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SmoothingBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enabled: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_lag: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_leg: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_newton: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_newton_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root_offset: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct StudyBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budgets: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directions: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_max: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_lag: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tols: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
}

/// Experiment-specific knobs with defaults filled in.
#[derive(Debug, Clone)]
pub enum StudyPlan {
    Price,
    Quad { budgets: Vec<usize>, reference: Option<f64> },
    Stat { samples: Vec<u64> },
    Weak { steps: Vec<usize> },
    Mixed { directions: Vec<usize>, k_max: u8 },
    Smoothing { m_lag: Vec<usize>, tols: Vec<f64>, reference: Option<f64> },
    Decay { levels: usize, probes: usize },
}

/// A config resolved against the library's types, ready to execute.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub experiment: Experiment,
    pub plan: PricingPlan,
    pub study: StudyPlan,
    pub format: FileFormat,
    pub out_stem: PathBuf,
}

pub fn load_file(path: &Path) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
}

fn require<T: Clone>(field: Option<&T>, name: &str, context: &str) -> Result<T, String> {
    field.cloned().ok_or_else(|| format!("{name}: required {context}"))
}

fn resolve_model(block: &ModelBlock) -> Result<Model, String> {
    match block.kind.as_str() {
        "gbm" => {
            let x0 = require(block.x0.as_ref(), "model.x0", "for model.kind = \"gbm\"")?;
            let sigma = require(block.sigma.as_ref(), "model.sigma", "for model.kind = \"gbm\"")?;
            let d = x0.len();
            let drift = block.drift.clone().unwrap_or_else(|| vec![0.0; d]);
            let corr = match (&block.correlation, block.rho) {
                (Some(full), _) => full.clone(),
                (None, Some(rho)) => {
                    let mut corr = vec![rho; d * d];
                    for i in 0..d {
                        corr[i * d + i] = 1.0;
                    }
                    corr
                }
                (None, None) => {
                    let mut corr = vec![0.0; d * d];
                    for i in 0..d {
                        corr[i * d + i] = 1.0;
                    }
                    corr
                }
            };
            for heston_only in ["s0", "v0", "mu", "kappa", "xi", "theta", "scheme"] {
                let set = match heston_only {
                    "s0" => block.s0.is_some(),
                    "v0" => block.v0.is_some(),
                    "mu" => block.mu.is_some(),
                    "kappa" => block.kappa.is_some(),
                    "xi" => block.xi.is_some(),
                    "theta" => block.theta.is_some(),
                    _ => block.scheme.is_some(),
                };
                if set {
                    return Err(format!("model.{heston_only}: not a gbm field"));
                }
            }
            Ok(Model::Gbm(GbmSpec { d, x0, sigma, corr, drift }))
        }
        "heston" => {
            let scheme = match require(block.scheme.as_ref(), "model.scheme", "for model.kind = \"heston\"")?.as_str() {
                "full-truncation" => VolScheme::FullTruncation,
                "partial-truncation" => VolScheme::PartialTruncation,
                "reflection" => VolScheme::Reflection,
                "abr" => VolScheme::Abr,
                "ou-based" => VolScheme::OuBased,
                other => {
                    return Err(format!(
                        "model.scheme: unknown scheme {other:?} (expected full-truncation, \
                         partial-truncation, reflection, abr, or ou-based)"
                    ))
                }
            };
            Ok(Model::Heston(HestonSpec {
                s0: require(block.s0.as_ref(), "model.s0", "for model.kind = \"heston\"")?,
                v0: require(block.v0.as_ref(), "model.v0", "for model.kind = \"heston\"")?,
                mu: block.mu.unwrap_or(0.0),
                rho: require(block.rho.as_ref(), "model.rho", "for model.kind = \"heston\"")?,
                kappa: require(block.kappa.as_ref(), "model.kappa", "for model.kind = \"heston\"")?,
                xi: require(block.xi.as_ref(), "model.xi", "for model.kind = \"heston\"")?,
                theta: require(block.theta.as_ref(), "model.theta", "for model.kind = \"heston\"")?,
                scheme,
            }))
        }
        other => Err(format!("model.kind: unknown model {other:?} (expected gbm or heston)")),
    }
}

fn resolve_payoff(block: &PayoffBlock) -> Result<PayoffSpec, String> {
    let spec = match block.kind.as_str() {
        "digital" => make_digital(block.strike),
        "call" => make_call(block.strike),
        "basket-call" => {
            let weights = require(
                block.weights.as_ref(),
                "payoff.weights",
                "for payoff.kind = \"basket-call\"",
            )?;
            make_basket_call(weights, block.strike)
        }
        other => {
            return Err(format!(
                "payoff.kind: unknown payoff {other:?} (expected digital, call, or basket-call)"
            ))
        }
    };
    spec.map_err(|e| format!("payoff: {e}"))
}

fn resolve_method(block: &MethodBlock) -> Result<MethodConfig, String> {
    match block.kind.as_str() {
        "asgq" => {
            let budget = require(block.budget.as_ref(), "method.budget", "for method.kind = \"asgq\"")?;
            for sampling_only in ["points", "shifts", "samples", "batch"] {
                let set = match sampling_only {
                    "points" => block.points.is_some(),
                    "shifts" => block.shifts.is_some(),
                    "samples" => block.samples.is_some(),
                    _ => block.batch.is_some(),
                };
                if set {
                    return Err(format!("method.{sampling_only}: not an asgq field"));
                }
            }
            Ok(MethodConfig::Asgq(AsgqConfig {
                budget,
                tol: block.tol.unwrap_or(0.0),
                ..AsgqConfig::default()
            }))
        }
        "rqmc" => Ok(MethodConfig::Rqmc {
            n_points: require(block.points.as_ref(), "method.points", "for method.kind = \"rqmc\"")?,
            n_shifts: block.shifts.unwrap_or(30),
        }),
        "mc" => Ok(MethodConfig::Mc {
            n_samples: require(block.samples.as_ref(), "method.samples", "for method.kind = \"mc\"")?,
            batch_size: block.batch.unwrap_or(65_536),
        }),
        other => Err(format!("method.kind: unknown method {other:?} (expected asgq, rqmc, or mc)")),
    }
}

fn resolve_smoothing(block: Option<&SmoothingBlock>) -> Result<(IntegrandKind, SmoothingConfig), String> {
    let mut cfg = SmoothingConfig::default();
    let Some(block) = block else {
        return Ok((IntegrandKind::Smoothed, cfg));
    };
    let kind = if block.enabled.unwrap_or(true) {
        IntegrandKind::Smoothed
    } else {
        IntegrandKind::Raw
    };
    if let Some(m) = block.m_lag {
        cfg.m_lag = m;
    }
    if let Some(m) = block.m_leg {
        cfg.m_leg = m;
    }
    if let Some(t) = block.tol_newton {
        cfg.tol_newton = t;
    }
    if let Some(n) = block.max_newton_iters {
        cfg.max_newton_iters = n;
    }
    if let Some(rule) = &block.rule {
        cfg.node_rule = match rule.as_str() {
            "gaussian-tail" => NodeRule::GaussianTail,
            "shifted-laguerre" => NodeRule::ShiftedLaguerre,
            other => {
                return Err(format!(
                    "smoothing.rule: unknown rule {other:?} (expected gaussian-tail or shifted-laguerre)"
                ))
            }
        };
    }
    if let Some(off) = block.root_offset {
        cfg.root_offset = off;
    }
    Ok((kind, cfg))
}

fn resolve_study(experiment: Experiment, block: Option<&StudyBlock>, grid_steps: usize) -> Result<StudyPlan, String> {
    let block = block.cloned().unwrap_or_default();
    let plan = match experiment {
        Experiment::Price => StudyPlan::Price,
        Experiment::QuadStudy => StudyPlan::Quad {
            budgets: block.budgets.unwrap_or_else(|| vec![100, 316, 1000, 3162, 10_000]),
            reference: block.reference,
        },
        Experiment::StatStudy => StudyPlan::Stat {
            samples: block.samples.unwrap_or_else(|| (6..=14).map(|k| 1u64 << k).collect()),
        },
        Experiment::WeakError => StudyPlan::Weak {
            steps: block.steps.unwrap_or_else(|| vec![2, 4, 8, 16, 32]),
        },
        Experiment::MixedDiff => StudyPlan::Mixed {
            directions: block.directions.unwrap_or_else(|| vec![0]),
            k_max: block.k_max.unwrap_or(6),
        },
        Experiment::SmoothingStudy => StudyPlan::Smoothing {
            m_lag: block.m_lag.unwrap_or_else(|| vec![4, 8, 16, 32, 64]),
            tols: block.tols.unwrap_or_else(|| vec![1e-10, 1e-8, 1e-6, 1e-4, 1e-2]),
            reference: block.reference,
        },
        Experiment::DecayProbe => {
            let max_levels = grid_steps.trailing_zeros() as usize;
            StudyPlan::Decay {
                levels: block.levels.unwrap_or_else(|| max_levels.min(3).max(1)),
                probes: block.probes.unwrap_or(64),
            }
        }
    };
    Ok(plan)
}

/// Turn a parsed config plus command-line overrides into a runnable plan.
/// Every error message names the config field it refers to.
pub fn resolve(
    mut config: RunConfig,
    default_stem: &str,
    out_override: Option<PathBuf>,
    seed_override: Option<u64>,
    format_override: Option<FileFormat>,
) -> Result<Resolved, String> {
    if let Some(seed) = seed_override {
        config.seed = Some(seed);
    }
    if let Some(format) = format_override {
        config.format = Some(format);
    }
    if let Some(out) = &out_override {
        config.out = Some(out.display().to_string());
    }

    let model = resolve_model(&config.model)?;
    let payoff = resolve_payoff(&config.payoff)?;
    let method = resolve_method(&config.method)?;
    let (kind, smoothing) = resolve_smoothing(config.smoothing.as_ref())?;
    let grid = PathGrid::new(config.grid.steps, config.grid.horizon, model.n_assets())
        .map_err(|e| format!("grid: {e}"))?;
    let plan = PricingPlan {
        model,
        payoff,
        grid,
        kind,
        method,
        smoothing,
        richardson_level: config.richardson.unwrap_or(0),
        seed: config.seed.unwrap_or(DEFAULT_SEED),
    };
    plan.validate().map_err(|e| e.to_string())?;

    let study = resolve_study(config.experiment, config.study.as_ref(), config.grid.steps)?;
    if matches!(config.experiment, Experiment::WeakError)
        && !matches!(plan.method, MethodConfig::Mc { .. })
    {
        return Err("method.kind: the weak-error study estimates bias by Monte Carlo; set kind = \"mc\"".into());
    }

    let format = config.format.unwrap_or(FileFormat::Csv);
    let out_stem = PathBuf::from(config.out.clone().unwrap_or_else(|| default_stem.to_string()));
    Ok(Resolved {
        experiment: config.experiment,
        config,
        plan,
        study,
        format,
        out_stem,
    })
}
