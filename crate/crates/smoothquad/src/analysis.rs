//! Convergence studies and diagnostic probes.
//!
//! Each harness sweeps one knob of a [`PricingPlan`] along an axis and
//! records a metric per axis value: quadrature error vs evaluation budget,
//! statistical error vs sample count, time-stepping bias vs step size,
//! hierarchical-surplus decay vs per-direction refinement level, smoothing
//! error vs preintegration size or root tolerance, and the decay of the
//! smoothed integrand's derivatives across Brownian-bridge levels. Every
//! result records the seed and plan it came from, so rerunning a study with
//! the same inputs reproduces the same numbers bit for bit.

use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::estimators::{
    derived_seed, price, reference_value, IntegrandKind, MethodConfig, PricingPlan, RawIntegrand,
};
use crate::hierarchy::{HaarLevelIndex, PathGrid};
use crate::models::{gbm_terminal, GbmSpec, Model, PathDiagnostics, PathEngine, VolScheme};
use crate::payoffs::PayoffSpec;
use crate::quadrature::{first_difference_profile, AsgqConfig};
use crate::rng::derive_rng;
use crate::sampling::{mean_and_ci, McConfig};
use crate::smoothing::{smooth, SmoothingConfig};
use crate::{par, Integrand};

/// Slope fits with R² below this are flagged instead of trusted.
pub const R_SQUARED_GATE: f64 = 0.9;

/// Central-difference step of the derivative-decay probe: large enough that
/// the preintegrated integrand's own accuracy (~1e-8 at default settings)
/// stays below the difference, small enough that truncation is negligible.
pub const PROBE_STEP: f64 = 1e-4;

/// Sparse-grid budget held fixed by the smoothing-parameter sweeps so the
/// quadrature error is a constant background across cells.
pub const SMOOTHING_STUDY_BUDGET: usize = 1_000;

/// One named metric column of a study.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
    /// Least-squares slope against the axis in the scale the study
    /// documents (log–log unless stated otherwise); `None` when fewer than
    /// two usable points remain after dropping nonpositive values.
    pub slope: Option<f64>,
    pub r_squared: Option<f64>,
}

/// A completed convergence study: a strictly increasing axis, one or more
/// finite metric series over it, per-series slope fits, and the inputs
/// needed to rerun it.
#[derive(Debug, Clone)]
pub struct StudyResult {
    pub label: String,
    pub axis_name: String,
    pub axis: Vec<f64>,
    pub series: Vec<Series>,
    /// Quality notes: `low-r-squared:<series>` when a fit falls below
    /// [`R_SQUARED_GATE`], `no-fit:<series>` when a fit was expected but
    /// impossible, `ci-dominated` when statistical noise swamps the
    /// measured bias.
    pub flags: Vec<String>,
    pub seed: u64,
    pub plan_summary: String,
    pub created_unix_secs: u64,
}

impl StudyResult {
    fn assemble(
        label: &str,
        axis_name: &str,
        axis: Vec<f64>,
        series: Vec<Series>,
        flags: Vec<String>,
        seed: u64,
        plan_summary: String,
    ) -> Result<Self> {
        if axis.is_empty() {
            return Err(Error::parameter("axis", "need at least one axis value"));
        }
        if axis.windows(2).any(|w| !(w[0] < w[1])) || axis.iter().any(|a| !a.is_finite()) {
            return Err(Error::parameter("axis", "axis values must be finite and strictly increasing"));
        }
        for s in &series {
            if s.values.len() != axis.len() {
                return Err(Error::Shape {
                    context: "study series length",
                    expected: axis.len(),
                    actual: s.values.len(),
                });
            }
            if let Some(&bad) = s.values.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "study metric",
                    at: bad,
                });
            }
        }
        Ok(StudyResult {
            label: label.to_string(),
            axis_name: axis_name.to_string(),
            axis,
            series,
            flags,
            seed,
            plan_summary,
            created_unix_secs: unix_now(),
        })
    }

    /// Look up a series by name.
    pub fn series(&self, name: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.name == name)
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn fit_line(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    if syy <= 1e-28 * n * (1.0 + my * my) {
        return Some((slope, 1.0));
    }
    let r2 = 1.0 - ((syy - slope * sxy) / syy).max(0.0);
    Some((slope, r2))
}

/// Slope and R² of `ln(value)` against `ln(axis)`, dropping pairs where
/// either entry is nonpositive or non-finite.
pub fn fit_loglog(axis: &[f64], values: &[f64]) -> Option<(f64, f64)> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = axis
        .iter()
        .zip(values)
        .filter(|(a, v)| **a > 0.0 && **v > 0.0 && a.is_finite() && v.is_finite())
        .map(|(a, v)| (a.ln(), v.ln()))
        .unzip();
    fit_line(&xs, &ys)
}

/// Slope and R² of `log₂(value)` against the raw axis: geometric decay per
/// unit axis step. A slope of `−s` means each step divides the metric by
/// `2^s`.
pub fn fit_semilog2(axis: &[f64], values: &[f64]) -> Option<(f64, f64)> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = axis
        .iter()
        .zip(values)
        .filter(|(a, v)| **v > 0.0 && a.is_finite() && v.is_finite())
        .map(|(a, v)| (*a, v.log2()))
        .unzip();
    fit_line(&xs, &ys)
}

fn fitted_series(
    name: &str,
    axis: &[f64],
    values: Vec<f64>,
    fit: Option<(f64, f64)>,
    flags: &mut Vec<String>,
) -> Series {
    let _ = axis;
    match fit {
        Some((_, r2)) if r2 < R_SQUARED_GATE => flags.push(format!("low-r-squared:{name}")),
        None => flags.push(format!("no-fit:{name}")),
        _ => {}
    }
    Series {
        name: name.to_string(),
        values,
        slope: fit.map(|f| f.0),
        r_squared: fit.map(|f| f.1),
    }
}

fn plain_series(name: &str, values: Vec<f64>) -> Series {
    Series {
        name: name.to_string(),
        values,
        slope: None,
        r_squared: None,
    }
}

fn ascending_usize(values: &[usize], name: &'static str) -> Result<Vec<usize>> {
    if values.is_empty() {
        return Err(Error::parameter(name, "need at least one value"));
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    v.dedup();
    Ok(v)
}

fn ascending_u64(values: &[u64], name: &'static str) -> Result<Vec<u64>> {
    if values.is_empty() {
        return Err(Error::parameter(name, "need at least one value"));
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    v.dedup();
    Ok(v)
}

fn ascending_f64(values: &[f64], name: &'static str) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::parameter(name, "need at least one value"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::parameter(name, "values must be finite"));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values compare"));
    v.dedup();
    Ok(v)
}

fn collect<T>(cells: Vec<Result<T>>) -> Result<Vec<T>> {
    cells.into_iter().collect()
}

fn relative_error(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs()
}

fn check_reference(reference: f64) -> Result<()> {
    if !(reference.is_finite() && reference != 0.0) {
        return Err(Error::parameter("reference", "must be finite and nonzero"));
    }
    Ok(())
}

fn plan_engine(plan: &PricingPlan) -> Result<PathEngine> {
    if let Model::Heston(spec) = &plan.model {
        if spec.scheme == VolScheme::OuBased && spec.ou_params()?.integer_count(1e-9).is_none() {
            return Err(Error::parameter(
                "model",
                "per-coordinate probes need an integer variance-process count; \
                 the blended estimator mixes two coordinate layouts",
            ));
        }
    }
    PathEngine::new(plan.model.clone(), plan.grid)
}

/// Relative error of the sparse-grid estimate against `reference` for both
/// the smoothed and the raw integrand as the evaluation budget grows.
///
/// The axis is the requested budget; the `smoothed-work`/`raw-work` series
/// record the evaluations actually spent. Errors are fitted log–log against
/// the budget.
pub fn quadrature_error_study_with_reference(
    plan: &PricingPlan,
    budgets: &[usize],
    reference: f64,
) -> Result<StudyResult> {
    plan.validate()?;
    check_reference(reference)?;
    let base_cfg = match &plan.method {
        MethodConfig::Asgq(cfg) => *cfg,
        _ => {
            return Err(Error::parameter(
                "method",
                "the quadrature-error study needs the sparse-grid method",
            ))
        }
    };
    let budgets = ascending_usize(budgets, "budgets")?;
    let n = budgets.len();
    let kinds = [IntegrandKind::Smoothed, IntegrandKind::Raw];
    let cells = collect(par::par_map_indexed(2 * n, |idx| {
        let mut cell = plan.clone();
        cell.kind = kinds[idx / n];
        cell.method = MethodConfig::Asgq(AsgqConfig {
            budget: budgets[idx % n],
            ..base_cfg
        });
        let est = price(&cell)?;
        Ok((relative_error(est.value, reference), est.work as f64))
    }))?;
    let axis: Vec<f64> = budgets.iter().map(|b| *b as f64).collect();
    let (smoothed, raw) = cells.split_at(n);
    let mut flags = Vec::new();
    let mut series = Vec::new();
    for (name, work_name, cells) in [("smoothed", "smoothed-work", smoothed), ("raw", "raw-work", raw)] {
        let errs: Vec<f64> = cells.iter().map(|c| c.0).collect();
        let fit = fit_loglog(&axis, &errs);
        series.push(fitted_series(name, &axis, errs, fit, &mut flags));
        series.push(plain_series(work_name, cells.iter().map(|c| c.1).collect()));
    }
    StudyResult::assemble(
        "quadrature-error",
        "budget",
        axis,
        series,
        flags,
        plan.seed,
        format!("{plan:?}"),
    )
}

/// [`quadrature_error_study_with_reference`] against the plan's stored
/// reference value.
pub fn quadrature_error_study(plan: &PricingPlan, budgets: &[usize]) -> Result<StudyResult> {
    let reference = reference_value(plan)?;
    quadrature_error_study_with_reference(plan, budgets, reference)
}

/// 95% CI half-width of the plan's sampling estimator as the sample count
/// grows.
///
/// The axis is lattice points per shift for the lattice rule and the sample
/// count for Monte Carlo. Each cell runs on an independently derived seed;
/// the `value` series records the estimates themselves.
pub fn statistical_error_study(plan: &PricingPlan, sample_grid: &[u64]) -> Result<StudyResult> {
    plan.validate()?;
    if matches!(plan.method, MethodConfig::Asgq(_)) {
        return Err(Error::parameter(
            "method",
            "the statistical-error study needs a sampling method",
        ));
    }
    let grid = ascending_u64(sample_grid, "sample_grid")?;
    let cells = collect(par::par_map_indexed(grid.len(), |i| {
        let n = grid[i];
        let mut cell = plan.clone();
        cell.method = match &plan.method {
            MethodConfig::Rqmc { n_shifts, .. } => MethodConfig::Rqmc {
                n_points: n,
                n_shifts: *n_shifts,
            },
            MethodConfig::Mc { batch_size, .. } => MethodConfig::Mc {
                n_samples: n,
                batch_size: *batch_size,
            },
            MethodConfig::Asgq(_) => unreachable!("rejected above"),
        };
        cell.seed = derived_seed(plan.seed, &format!("stat-cell-{n}"));
        let est = price(&cell)?;
        Ok((est.stat_error, est.value))
    }))?;
    let axis: Vec<f64> = grid.iter().map(|n| *n as f64).collect();
    let half_widths: Vec<f64> = cells.iter().map(|c| c.0).collect();
    let mut flags = Vec::new();
    let fit = fit_loglog(&axis, &half_widths);
    let series = vec![
        fitted_series("ci-half-width", &axis, half_widths, fit, &mut flags),
        plain_series("value", cells.iter().map(|c| c.1).collect()),
    ];
    StudyResult::assemble(
        "statistical-error",
        "samples",
        axis,
        series,
        flags,
        plan.seed,
        format!("{plan:?}"),
    )
}

fn gbm_weak_cell(
    spec: &GbmSpec,
    payoff: &PayoffSpec,
    grid: &PathGrid,
    mc: &McConfig,
    seed: u64,
) -> Result<(f64, f64)> {
    let chol = spec.cholesky()?;
    let d = spec.d;
    let n_steps = grid.n_steps;
    let sqrt_dt = grid.dt().sqrt();
    let diag = PathDiagnostics::default();
    let n_batches = mc.n_samples.div_ceil(mc.batch_size);
    let partials = par::par_map_indexed(n_batches as usize, |b| -> Result<(f64, f64)> {
        let b = b as u64;
        let start = b * mc.batch_size;
        let len = mc.batch_size.min(mc.n_samples - start);
        let mut rng = derive_rng(seed, &format!("weak-batch-{b}"));
        let mut incr = vec![0.0f64; d * n_steps];
        let mut z = vec![0.0f64; d];
        let mut exact = vec![0.0f64; d];
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for k in 0..len {
            for step in 0..n_steps {
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                for i in 0..d {
                    let mut c = 0.0;
                    for j in 0..=i {
                        c += chol[i * d + j] * z[j];
                    }
                    incr[i * n_steps + step] = sqrt_dt * c;
                }
            }
            let euler = gbm_terminal(spec, grid, &incr, &diag);
            for i in 0..d {
                let w_t: f64 = incr[i * n_steps..(i + 1) * n_steps].iter().sum();
                let sigma = spec.sigma[i];
                exact[i] = spec.x0[i]
                    * ((spec.drift[i] - 0.5 * sigma * sigma) * grid.horizon + sigma * w_t).exp();
            }
            let v = payoff.evaluate(&euler) - payoff.evaluate(&exact);
            if !v.is_finite() {
                return Err(Error::NonFiniteSample { index: start + k });
            }
            sum += v;
            sumsq += v * v;
        }
        Ok((sum, sumsq))
    });
    let (mut sum, mut sumsq) = (0.0, 0.0);
    for partial in partials {
        let (s, s2) = partial?;
        sum += s;
        sumsq += s2;
    }
    Ok(mean_and_ci(sum, sumsq, mc.n_samples))
}

/// Time-stepping bias `|E[g(X̄^Δt)] − reference|` with Monte Carlo CIs,
/// fitted log–log against Δt.
///
/// GBM cells share Brownian increments between the Euler path and an exactly
/// simulated path, so the bias is estimated directly as the mean coupled
/// difference and its CI reflects the difference's (small) variance. Heston
/// cells estimate `E[g]` by plain Monte Carlo and subtract the stored
/// reference. When any cell's |bias| falls below its CI half-width the study
/// carries the `ci-dominated` flag and reports no slope.
pub fn weak_error_study(
    model: &Model,
    payoff: &PayoffSpec,
    horizon: f64,
    n_grid: &[usize],
    mc: &McConfig,
) -> Result<StudyResult> {
    model.validate()?;
    mc.validate()?;
    if payoff.n_assets() != model.n_assets() {
        return Err(Error::Shape {
            context: "payoff weights vs model assets",
            expected: model.n_assets(),
            actual: payoff.n_assets(),
        });
    }
    let mut steps = ascending_usize(n_grid, "n_grid")?;
    steps.reverse();
    let reference_plan = |grid: PathGrid, seed: u64| PricingPlan {
        model: model.clone(),
        payoff: payoff.clone(),
        grid,
        kind: IntegrandKind::Raw,
        method: MethodConfig::Mc {
            n_samples: mc.n_samples,
            batch_size: mc.batch_size,
        },
        smoothing: SmoothingConfig::default(),
        richardson_level: 0,
        seed,
    };
    let heston_reference = match model {
        Model::Gbm(_) => None,
        Model::Heston(_) => Some(reference_value(&reference_plan(
            PathGrid::new(steps[0], horizon, model.n_assets())?,
            0,
        ))?),
    };
    let cells = collect(par::par_map_indexed(steps.len(), |i| {
        let n = steps[i];
        let grid = PathGrid::new(n, horizon, model.n_assets())?;
        let seed = derived_seed(mc.seed, &format!("weak-cell-{n}"));
        match model {
            Model::Gbm(spec) => gbm_weak_cell(spec, payoff, &grid, mc, seed),
            Model::Heston(_) => {
                let est = price(&reference_plan(grid, seed))?;
                Ok((
                    est.value - heston_reference.expect("reference present for Heston"),
                    est.stat_error,
                ))
            }
        }
    }))?;
    let axis: Vec<f64> = steps.iter().map(|n| horizon / *n as f64).collect();
    let biases: Vec<f64> = cells.iter().map(|c| c.0.abs()).collect();
    let cis: Vec<f64> = cells.iter().map(|c| c.1).collect();
    let dominated = biases.iter().zip(&cis).any(|(b, ci)| b < ci);
    let mut flags = Vec::new();
    let bias_series = if dominated {
        flags.push("ci-dominated".to_string());
        plain_series("bias", biases)
    } else {
        let fit = fit_loglog(&axis, &biases);
        fitted_series("bias", &axis, biases, fit, &mut flags)
    };
    let series = vec![bias_series, plain_series("ci-half-width", cis)];
    let plan_summary = format!(
        "weak error: {model:?}, {payoff:?}, horizon {horizon}, {} samples/cell",
        mc.n_samples
    );
    StudyResult::assemble("weak-error", "dt", axis, series, flags, mc.seed, plan_summary)
}

/// Hierarchical-surplus decay along single coordinate axes of the plan's
/// integrand: for each requested direction, `|ΔQ|` of the tensor telescope
/// at multi-indices `1 + k·e_dir`, `k = 1..=k_max`.
///
/// Series are fitted as `log₂|ΔQ|` against `k`, so a slope of `−s` means
/// each extra level divides the contribution by `2^s`.
pub fn mixed_difference_study(
    plan: &PricingPlan,
    directions: &[usize],
    k_max: u8,
) -> Result<StudyResult> {
    plan.validate()?;
    if k_max == 0 {
        return Err(Error::parameter("k_max", "need at least one level"));
    }
    let directions = ascending_usize(directions, "directions")?;
    let engine = plan_engine(plan)?;
    let f: Box<dyn Integrand + '_> = match plan.kind {
        IntegrandKind::Smoothed => Box::new(smooth(&plan.payoff, &engine, plan.smoothing)?),
        IntegrandKind::Raw => Box::new(RawIntegrand::new(&engine, &plan.payoff)?),
    };
    let dim = f.dim();
    if let Some(&bad) = directions.iter().find(|d| **d >= dim) {
        return Err(Error::parameter(
            "directions",
            format!("axis {bad} out of range for {dim} coordinates"),
        ));
    }
    let profiles = collect(par::par_map_indexed(directions.len(), |i| {
        first_difference_profile(f.as_ref(), directions[i], k_max)
    }))?;
    let axis: Vec<f64> = (1..=k_max).map(f64::from).collect();
    let mut flags = Vec::new();
    let mut series = Vec::new();
    for (dir, profile) in directions.iter().zip(profiles) {
        let fit = fit_semilog2(&axis, &profile);
        series.push(fitted_series(&format!("direction-{dir}"), &axis, profile, fit, &mut flags));
    }
    StudyResult::assemble(
        "mixed-difference",
        "level",
        axis,
        series,
        flags,
        plan.seed,
        format!("{plan:?}"),
    )
}

/// The two preintegration-accuracy sweeps at a fixed sparse-grid size.
#[derive(Debug, Clone)]
pub struct SmoothingParameterStudy {
    /// Relative error as the preintegration rule grows, Newton tolerance
    /// fixed at the plan's value. Axis: `m_lag`.
    pub vs_m_lag: StudyResult,
    /// Relative error as the Newton tolerance tightens, preintegration size
    /// fixed at 128. Axis: the tolerance, ascending.
    pub vs_tol: StudyResult,
}

/// Relative smoothing error against `reference` as the preintegration size
/// and the root tolerance vary, one sweep per knob, with the sparse-grid
/// budget pinned at [`SMOOTHING_STUDY_BUDGET`] so quadrature error stays a
/// constant background. Runs at the plan's grid without extrapolation.
pub fn smoothing_parameter_study_with_reference(
    plan: &PricingPlan,
    m_lag_grid: &[usize],
    tol_grid: &[f64],
    reference: f64,
) -> Result<SmoothingParameterStudy> {
    plan.validate()?;
    check_reference(reference)?;
    if plan.kind != IntegrandKind::Smoothed {
        return Err(Error::parameter(
            "kind",
            "the smoothing-parameter study needs the smoothed integrand",
        ));
    }
    let m_grid = ascending_usize(m_lag_grid, "m_lag_grid")?;
    let tol_grid = ascending_f64(tol_grid, "tol_grid")?;
    let base = {
        let mut p = plan.clone();
        p.method = MethodConfig::Asgq(AsgqConfig {
            budget: SMOOTHING_STUDY_BUDGET,
            tol: 0.0,
            ..AsgqConfig::default()
        });
        p.richardson_level = 0;
        p
    };
    let m_errors = collect(par::par_map_indexed(m_grid.len(), |i| {
        let mut cell = base.clone();
        cell.smoothing.m_lag = m_grid[i];
        Ok(relative_error(price(&cell)?.value, reference))
    }))?;
    let tol_errors = collect(par::par_map_indexed(tol_grid.len(), |i| {
        let mut cell = base.clone();
        cell.smoothing.m_lag = 128;
        cell.smoothing.tol_newton = tol_grid[i];
        Ok(relative_error(price(&cell)?.value, reference))
    }))?;
    let m_axis: Vec<f64> = m_grid.iter().map(|m| *m as f64).collect();
    let mut m_flags = Vec::new();
    let m_fit = fit_loglog(&m_axis, &m_errors);
    let vs_m_lag = StudyResult::assemble(
        "smoothing-error-vs-m-lag",
        "m-lag",
        m_axis.clone(),
        vec![fitted_series("relative-error", &m_axis, m_errors, m_fit, &mut m_flags)],
        m_flags,
        plan.seed,
        format!("{plan:?}"),
    )?;
    let mut t_flags = Vec::new();
    let t_fit = fit_loglog(&tol_grid, &tol_errors);
    let vs_tol = StudyResult::assemble(
        "smoothing-error-vs-tol",
        "tol-newton",
        tol_grid.clone(),
        vec![fitted_series("relative-error", &tol_grid, tol_errors, t_fit, &mut t_flags)],
        t_flags,
        plan.seed,
        format!("{plan:?}"),
    )?;
    Ok(SmoothingParameterStudy { vs_m_lag, vs_tol })
}

/// [`smoothing_parameter_study_with_reference`] against the plan's stored
/// reference value.
pub fn smoothing_parameter_study(
    plan: &PricingPlan,
    m_lag_grid: &[usize],
    tol_grid: &[f64],
) -> Result<SmoothingParameterStudy> {
    let reference = reference_value(plan)?;
    smoothing_parameter_study_with_reference(plan, m_lag_grid, tol_grid, reference)
}

/// Per-level means of the smoothed integrand's finite-difference
/// derivatives.
#[derive(Debug, Clone)]
pub struct DecayProbeReport {
    /// Mean of `|∂Ī/∂z|` over probe points and coordinates, indexed by
    /// refinement level starting at 0.
    pub level_means: Vec<f64>,
    /// Coordinates contributing to each level.
    pub level_counts: Vec<usize>,
    /// Geometric ratio between consecutive level means: `2^slope` of the
    /// `log₂(mean)` fit against the level. `None` when a mean vanishes or
    /// only one level was probed.
    pub ratio: Option<f64>,
    pub h: f64,
    pub n_probe_points: usize,
    pub seed: u64,
}

/// Probe an integrand's sensitivity to its coordinates, grouped by the
/// level `level_of` assigns: central differences with step `h` at
/// `n_probe_points` standard-normal coordinate vectors, averaged per level.
///
/// Coordinates mapped to `None` (or to a level ≥ `levels`) are skipped;
/// every level below `levels` must own at least one coordinate.
pub fn derivative_decay_probe_with(
    f: &dyn Integrand,
    level_of: &(dyn Fn(usize) -> Option<usize> + Sync),
    levels: usize,
    n_probe_points: usize,
    h: f64,
    seed: u64,
) -> Result<DecayProbeReport> {
    if levels == 0 {
        return Err(Error::parameter("levels", "need at least one level"));
    }
    if n_probe_points == 0 {
        return Err(Error::parameter("n_probe_points", "need at least one probe point"));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::parameter("h", "step must be positive"));
    }
    let dim = f.dim();
    let mut coords: Vec<Vec<usize>> = vec![Vec::new(); levels];
    for r in 0..dim {
        if let Some(level) = level_of(r) {
            if level < levels {
                coords[level].push(r);
            }
        }
    }
    if let Some(empty) = coords.iter().position(|c| c.is_empty()) {
        return Err(Error::parameter(
            "levels",
            format!("no coordinates at level {empty}; the grid supports fewer levels"),
        ));
    }
    let mut rng = derive_rng(seed, "decay-probe");
    let probes: Vec<Vec<f64>> = (0..n_probe_points)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let per_probe = collect(par::par_map_indexed(n_probe_points, |p| {
        let mut x = probes[p].clone();
        let mut acc = vec![0.0f64; levels];
        for (level, level_coords) in coords.iter().enumerate() {
            for &c in level_coords {
                let x0 = x[c];
                x[c] = x0 + h;
                let up = f.eval(&x)?;
                x[c] = x0 - h;
                let down = f.eval(&x)?;
                x[c] = x0;
                acc[level] += ((up - down) / (2.0 * h)).abs();
            }
        }
        Ok(acc)
    }))?;
    let mut level_means = vec![0.0f64; levels];
    for acc in &per_probe {
        for (mean, a) in level_means.iter_mut().zip(acc) {
            *mean += a;
        }
    }
    let level_counts: Vec<usize> = coords.iter().map(Vec::len).collect();
    for (mean, count) in level_means.iter_mut().zip(&level_counts) {
        *mean /= (n_probe_points * count) as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite {
                context: "derivative probe",
                at: *mean,
            });
        }
    }
    let level_axis: Vec<f64> = (0..levels).map(|n| n as f64).collect();
    let ratio = if level_means.iter().all(|m| *m > 0.0) {
        fit_line(
            &level_axis,
            &level_means.iter().map(|m| m.log2()).collect::<Vec<f64>>(),
        )
        .map(|(slope, _)| slope.exp2())
    } else {
        None
    };
    Ok(DecayProbeReport {
        level_means,
        level_counts,
        ratio,
        h,
        n_probe_points,
        seed,
    })
}

/// Probe the smoothed integrand's sensitivity to each Brownian-bridge fine
/// coordinate, grouped by bridge level: level `n` coordinates refine spans
/// of length `2⁻ⁿT`. Requires a dyadic step count; `levels` may not exceed
/// `log₂(n_steps)`.
pub fn derivative_decay_probe(
    plan: &PricingPlan,
    levels: usize,
    n_probe_points: usize,
) -> Result<DecayProbeReport> {
    plan.validate()?;
    if plan.kind != IntegrandKind::Smoothed {
        return Err(Error::parameter(
            "kind",
            "the decay probe measures the smoothed integrand",
        ));
    }
    let n = plan.grid.n_steps;
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::parameter(
            "grid",
            "the decay probe needs a dyadic step count of at least 2",
        ));
    }
    let max_levels = n.trailing_zeros() as usize;
    if levels > max_levels {
        return Err(Error::parameter(
            "levels",
            format!("a grid with {n} steps populates {max_levels} levels"),
        ));
    }
    let engine = plan_engine(plan)?;
    let streams = engine.n_streams();
    let f = smooth(&plan.payoff, &engine, plan.smoothing)?;
    let level_of = move |reduced: usize| -> Option<usize> {
        let full = reduced + 1;
        if full < streams {
            return None;
        }
        let idx = full - streams;
        Some(HaarLevelIndex::of_slot(idx / streams).n as usize)
    };
    derivative_decay_probe_with(&f, &level_of, levels, n_probe_points, PROBE_STEP, plan.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::gbm_call_expectation;
    use crate::models::HestonSpec;
    use crate::payoffs::{make_call, make_digital};
    use crate::smoothing::NodeRule;
    use crate::FnIntegrand;

    fn gbm_plan(n_steps: usize, payoff: PayoffSpec, method: MethodConfig) -> PricingPlan {
        PricingPlan {
            model: Model::Gbm(GbmSpec::single(100.0, 0.4, 0.0)),
            payoff,
            grid: PathGrid::new(n_steps, 1.0, 1).unwrap(),
            kind: IntegrandKind::Smoothed,
            method,
            smoothing: SmoothingConfig::default(),
            richardson_level: 0,
            seed: 7,
        }
    }

    fn asgq_method(budget: usize) -> MethodConfig {
        MethodConfig::Asgq(AsgqConfig {
            budget,
            ..AsgqConfig::default()
        })
    }

    #[test]
    fn loglog_fit_recovers_power_law() {
        let axis = [1.0, 2.0, 4.0, 8.0, 16.0];
        let values: Vec<f64> = axis.iter().map(|x: &f64| 3.0 * x.powf(-1.7)).collect();
        let (slope, r2) = fit_loglog(&axis, &values).unwrap();
        assert!((slope + 1.7).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);

        let constant = [2.5, 2.5, 2.5, 2.5, 2.5];
        let (slope, r2) = fit_loglog(&axis, &constant).unwrap();
        assert!(slope.abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);

        let with_zero = [3.0, 0.0, 0.1875, 0.046875, 0.01171875];
        let (slope, _) = fit_loglog(&axis, &with_zero).unwrap();
        assert!((slope + 2.0).abs() < 1e-12);

        assert!(fit_loglog(&[1.0], &[1.0]).is_none());
        assert!(fit_loglog(&axis, &[0.0; 5]).is_none());
    }

    #[test]
    fn semilog2_fit_recovers_geometric_decay() {
        let axis = [1.0, 2.0, 3.0, 4.0];
        let values: Vec<f64> = axis.iter().map(|k| 5.0 * (-1.5f64 * k).exp2()).collect();
        let (slope, r2) = fit_semilog2(&axis, &values).unwrap();
        assert!((slope + 1.5).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quadrature_study_separates_smoothed_from_raw() {
        let plan = gbm_plan(1, make_digital(100.0).unwrap(), asgq_method(64));
        let budgets = [9, 33, 129, 33];
        let study = quadrature_error_study_with_reference(&plan, &budgets, 0.5).unwrap();
        assert_eq!(study.axis, vec![9.0, 33.0, 129.0]);
        let smoothed = study.series("smoothed").unwrap();
        let raw = study.series("raw").unwrap();
        for (s, r) in smoothed.values.iter().zip(&raw.values) {
            assert!(*s < 1e-12, "smoothed error {s} above preintegration accuracy");
            assert!(s < r, "smoothed {s} not below raw {r}");
        }
        let work = study.series("raw-work").unwrap();
        assert!(work.values.windows(2).all(|w| w[0] <= w[1]));
        assert!(study.series("smoothed-work").is_some());
    }

    #[test]
    fn quadrature_study_rejects_sampling_methods() {
        let plan = gbm_plan(
            1,
            make_digital(100.0).unwrap(),
            MethodConfig::Mc {
                n_samples: 100,
                batch_size: 64,
            },
        );
        let err = quadrature_error_study_with_reference(&plan, &[16], 0.5).unwrap_err();
        assert!(matches!(err, Error::Parameter { name: "method", .. }), "got {err:?}");
        let err = quadrature_error_study_with_reference(
            &gbm_plan(1, make_digital(100.0).unwrap(), asgq_method(16)),
            &[16],
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parameter { name: "reference", .. }), "got {err:?}");
    }

    #[test]
    fn statistical_study_recovers_monte_carlo_rate() {
        let mut plan = gbm_plan(
            1,
            make_digital(100.0).unwrap(),
            MethodConfig::Mc {
                n_samples: 1000,
                batch_size: 4096,
            },
        );
        plan.kind = IntegrandKind::Raw;
        plan.seed = 11;
        let study =
            statistical_error_study(&plan, &[1 << 10, 1 << 12, 1 << 14, 1 << 16, 1 << 18]).unwrap();
        let ci = study.series("ci-half-width").unwrap();
        let slope = ci.slope.unwrap();
        assert!((slope + 0.5).abs() < 0.05, "MC slope {slope} not near −1/2");
        assert!(ci.r_squared.unwrap() > 0.95);
        assert!(study.series("value").unwrap().values.iter().all(|v| (v - 0.5).abs() < 0.05));
    }

    #[test]
    fn statistical_study_lattice_beats_monte_carlo_rate() {
        let mut plan = gbm_plan(
            2,
            make_call(100.0).unwrap(),
            MethodConfig::Rqmc {
                n_points: 64,
                n_shifts: 8,
            },
        );
        plan.seed = 3;
        let study = statistical_error_study(&plan, &[64, 256, 1024]).unwrap();
        let ci = study.series("ci-half-width").unwrap();
        assert!(ci.values.windows(2).all(|w| w[1] < w[0]), "{:?}", ci.values);
        let slope = ci.slope.unwrap();
        assert!(slope < -0.75, "lattice slope {slope} not better than MC");
    }

    #[test]
    fn statistical_study_rejects_deterministic_method() {
        let plan = gbm_plan(1, make_digital(100.0).unwrap(), asgq_method(16));
        let err = statistical_error_study(&plan, &[128]).unwrap_err();
        assert!(matches!(err, Error::Parameter { name: "method", .. }), "got {err:?}");
    }

    #[test]
    fn weak_error_slope_near_one_for_gbm_call() {
        let model = Model::Gbm(GbmSpec::single(100.0, 0.4, 0.0));
        let payoff = make_call(100.0).unwrap();
        let mc = McConfig {
            n_samples: 400_000,
            seed: 5,
            batch_size: 16_384,
        };
        let study = weak_error_study(&model, &payoff, 1.0, &[4, 8, 16], &mc).unwrap();
        assert_eq!(study.axis, vec![1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0]);
        assert!(study.flags.iter().all(|f| f != "ci-dominated"), "{:?}", study.flags);
        let bias = study.series("bias").unwrap();
        let slope = bias.slope.unwrap();
        assert!((slope - 1.0).abs() < 0.3, "weak slope {slope} not near one");
        let reference = gbm_call_expectation(100.0, 100.0, 0.4, 1.0, 0.0);
        for b in &bias.values {
            assert!(*b < 0.05 * reference, "bias {b} implausibly large");
        }
    }

    #[test]
    fn weak_error_flags_ci_domination() {
        let model = Model::Gbm(GbmSpec::single(100.0, 0.4, 0.0));
        let payoff = make_call(100.0).unwrap();
        let mc = McConfig {
            n_samples: 2_000,
            seed: 9,
            batch_size: 1_024,
        };
        let study = weak_error_study(&model, &payoff, 1.0, &[64, 128], &mc).unwrap();
        assert!(study.flags.iter().any(|f| f == "ci-dominated"), "{:?}", study.flags);
        let bias = study.series("bias").unwrap();
        assert!(bias.slope.is_none());
        assert_eq!(study.series("ci-half-width").unwrap().values.len(), 2);
    }

    #[test]
    fn weak_error_heston_uses_stored_reference() {
        let model = Model::Heston(HestonSpec {
            s0: 100.0,
            v0: 0.04,
            mu: 0.0,
            rho: -0.9,
            kappa: 1.0,
            xi: 0.1,
            theta: 0.0025,
            scheme: VolScheme::FullTruncation,
        });
        let payoff = make_call(100.0).unwrap();
        let mc = McConfig {
            n_samples: 20_000,
            seed: 2,
            batch_size: 4_096,
        };
        let study = weak_error_study(&model, &payoff, 1.0, &[2, 4], &mc).unwrap();
        assert_eq!(study.axis.len(), 2);
        assert!(study.series("bias").is_some() && study.series("ci-half-width").is_some());

        let mut off_grid = model.clone();
        if let Model::Heston(spec) = &mut off_grid {
            spec.theta = 0.5;
        }
        assert!(weak_error_study(&off_grid, &payoff, 1.0, &[2, 4], &mc).is_err());
    }

    #[test]
    fn mixed_difference_matches_direct_profile() {
        let plan = gbm_plan(4, make_call(100.0).unwrap(), asgq_method(4000));
        let study = mixed_difference_study(&plan, &[2, 0, 1], 4).unwrap();
        assert_eq!(study.axis, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(study.series.len(), 3);

        let engine = PathEngine::new(plan.model.clone(), plan.grid).unwrap();
        let f = smooth(&plan.payoff, &engine, plan.smoothing).unwrap();
        let direct = first_difference_profile(&f, 0, 4).unwrap();
        assert_eq!(study.series("direction-0").unwrap().values, direct);
        for series in &study.series {
            assert!(series.values.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn mixed_difference_rejects_out_of_range_direction() {
        let plan = gbm_plan(2, make_call(100.0).unwrap(), asgq_method(100));
        let err = mixed_difference_study(&plan, &[1], 3).unwrap_err();
        assert!(matches!(err, Error::Parameter { name: "directions", .. }), "got {err:?}");
        let err = mixed_difference_study(&plan, &[0], 0).unwrap_err();
        assert!(matches!(err, Error::Parameter { name: "k_max", .. }), "got {err:?}");
    }

    #[test]
    fn smoothing_study_call_error_plateaus_in_m_lag() {
        let mut plan = gbm_plan(2, make_call(100.0).unwrap(), asgq_method(100));
        plan.smoothing.node_rule = NodeRule::ShiftedLaguerre;
        plan.smoothing.tol_newton = 1e-12;
        let study = smoothing_parameter_study_with_reference(
            &plan,
            &[8, 16, 32, 64],
            &[1e-10],
            16.184399860658505,
        )
        .unwrap();
        let errs = &study.vs_m_lag.series("relative-error").unwrap().values;
        assert_eq!(study.vs_m_lag.axis, vec![8.0, 16.0, 32.0, 64.0]);
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] * 1.05 + 1e-13, "not plateauing: {errs:?}");
        }
        assert!(errs[3] < 1e-9, "m_lag = 64 error {} above plateau", errs[3]);
        assert!(errs[0] > errs[3], "no visible convergence: {errs:?}");
    }

    #[test]
    fn smoothing_study_tol_sweep_tightens_digital_error() {
        let mut plan = gbm_plan(2, make_digital(100.0).unwrap(), asgq_method(100));
        plan.smoothing.tol_newton = 1e-10;
        let reference = {
            let mut refined = plan.clone();
            refined.smoothing.m_lag = 128;
            refined.smoothing.m_leg = 128;
            refined.smoothing.tol_newton = 1e-13;
            refined.method = asgq_method(SMOOTHING_STUDY_BUDGET);
            price(&refined).unwrap().value
        };
        let study = smoothing_parameter_study_with_reference(
            &plan,
            &[64],
            &[1e-10, 1e-6, 1e-3, 1e-1],
            reference,
        )
        .unwrap();
        let errs = &study.vs_tol.series("relative-error").unwrap().values;
        assert_eq!(study.vs_tol.axis, vec![1e-10, 1e-6, 1e-3, 1e-1]);
        assert!(
            errs[0] <= errs[3] && errs[0] < 1e-8,
            "tight tolerance should beat loose: {errs:?}"
        );
    }

    #[test]
    fn smoothing_study_rejects_raw_plans() {
        let mut plan = gbm_plan(2, make_call(100.0).unwrap(), asgq_method(100));
        plan.kind = IntegrandKind::Raw;
        let err =
            smoothing_parameter_study_with_reference(&plan, &[16], &[1e-8], 16.0).unwrap_err();
        assert!(matches!(err, Error::Parameter { name: "kind", .. }), "got {err:?}");
    }

    #[test]
    fn decay_probe_linear_stub_hits_constructed_rate() {
        let weights = [1.0, 0.5f64.sqrt(), 0.5f64.sqrt(), 0.5, 0.5, 0.5, 0.5];
        let f = FnIntegrand::new(7, move |x| {
            Ok(x.iter().zip(weights).map(|(xi, w)| w * xi).sum())
        });
        let level_of = |r: usize| Some(match r {
            0 => 0,
            1 | 2 => 1,
            _ => 2,
        });
        let report = derivative_decay_probe_with(&f, &level_of, 3, 16, 1e-4, 42).unwrap();
        assert_eq!(report.level_counts, vec![1, 2, 4]);
        for (mean, expected) in report.level_means.iter().zip([1.0, 0.5f64.sqrt(), 0.5]) {
            assert!((mean - expected).abs() < 1e-9, "{:?}", report.level_means);
        }
        let ratio = report.ratio.unwrap();
        assert!((ratio - 0.5f64.sqrt()).abs() < 1e-9, "ratio {ratio}");
    }

    #[test]
    fn decay_probe_constant_integrand_vanishes() {
        let f = FnIntegrand::new(4, |_| Ok(42.0));
        let level_of = |r: usize| Some(r / 2);
        let report = derivative_decay_probe_with(&f, &level_of, 2, 8, 1e-4, 1).unwrap();
        assert!(report.level_means.iter().all(|m| *m < 1e-10));
        assert!(report.ratio.is_none());
    }

    // The first derivative of the preintegrated Euler-GBM integrand with
    // respect to a level-n bridge coordinate is level-flat, not decaying:
    // the coordinate moves each increment in its span by ±2^{n/2}Δt, the
    // product form makes the ± contributions cancel except through the
    // span's own bridge displacement 2^{−n/2}z, and the two level factors
    // cancel exactly, leaving a sensitivity ≈ X σ² Δt · z at every level.
    #[test]
    fn decay_probe_gbm_call_levels_stay_flat() {
        let plan = gbm_plan(8, make_call(100.0).unwrap(), asgq_method(100));
        let report = derivative_decay_probe(&plan, 3, 64).unwrap();
        assert_eq!(report.level_counts, vec![1, 2, 4]);
        assert!(report.level_means.iter().all(|m| *m > 0.0));
        let ratio = report.ratio.unwrap();
        assert!(
            (0.85..=1.1).contains(&ratio),
            "flat-derivative ratio {ratio} moved, means {:?}",
            report.level_means
        );
    }

    // Heston's variance path evolves causally, so its Euler steps are not
    // exchangeable and the GBM cancellation does not apply: per-level
    // derivative means decay geometrically.
    #[test]
    fn decay_probe_heston_call_levels_decay() {
        let plan = PricingPlan {
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
            kind: IntegrandKind::Smoothed,
            method: asgq_method(100),
            smoothing: SmoothingConfig::default(),
            richardson_level: 0,
            seed: 7,
        };
        let report = derivative_decay_probe(&plan, 3, 32).unwrap();
        assert_eq!(report.level_counts, vec![2, 4, 8]);
        let ratio = report.ratio.unwrap();
        assert!(
            (0.3..=0.6).contains(&ratio),
            "causal-variance decay ratio {ratio} outside band, means {:?}",
            report.level_means
        );
        assert!(
            report.level_means.windows(2).all(|w| w[1] < w[0]),
            "{:?}",
            report.level_means
        );
    }

    #[test]
    fn decay_probe_validates_plan_shape() {
        let mut raw = gbm_plan(8, make_call(100.0).unwrap(), asgq_method(100));
        raw.kind = IntegrandKind::Raw;
        assert!(matches!(
            derivative_decay_probe(&raw, 2, 4).unwrap_err(),
            Error::Parameter { name: "kind", .. }
        ));
        let plan = gbm_plan(6, make_call(100.0).unwrap(), asgq_method(100));
        assert!(matches!(
            derivative_decay_probe(&plan, 2, 4).unwrap_err(),
            Error::Parameter { name: "grid", .. }
        ));
        let plan = gbm_plan(8, make_call(100.0).unwrap(), asgq_method(100));
        assert!(matches!(
            derivative_decay_probe(&plan, 4, 4).unwrap_err(),
            Error::Parameter { name: "levels", .. }
        ));
    }

    #[test]
    fn studies_are_bit_reproducible() {
        let model = Model::Gbm(GbmSpec::single(100.0, 0.4, 0.0));
        let payoff = make_call(100.0).unwrap();
        let mc = McConfig {
            n_samples: 20_000,
            seed: 13,
            batch_size: 4_096,
        };
        let a = weak_error_study(&model, &payoff, 1.0, &[2, 4], &mc).unwrap();
        let b = weak_error_study(&model, &payoff, 1.0, &[2, 4], &mc).unwrap();
        assert_eq!(a.axis, b.axis);
        for (sa, sb) in a.series.iter().zip(&b.series) {
            assert_eq!(sa.values, sb.values);
            assert_eq!(sa.slope, sb.slope);
        }

        let mut plan = gbm_plan(
            1,
            make_digital(100.0).unwrap(),
            MethodConfig::Mc {
                n_samples: 1000,
                batch_size: 512,
            },
        );
        plan.kind = IntegrandKind::Raw;
        let a = statistical_error_study(&plan, &[1 << 10, 1 << 12]).unwrap();
        let b = statistical_error_study(&plan, &[1 << 10, 1 << 12]).unwrap();
        assert_eq!(a.series("value").unwrap().values, b.series("value").unwrap().values);
        assert_eq!(
            a.series("ci-half-width").unwrap().values,
            b.series("ci-half-width").unwrap().values
        );
    }
}
