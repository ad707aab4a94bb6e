use std::time::Instant;

use serde_json::{json, Map, Value};
use smoothquad::analysis::{
    derivative_decay_probe, mixed_difference_study, quadrature_error_study,
    quadrature_error_study_with_reference, smoothing_parameter_study,
    smoothing_parameter_study_with_reference, statistical_error_study, weak_error_study,
    StudyResult,
};
use smoothquad::estimators::{price, reference_value, MethodConfig};
use smoothquad::par;
use smoothquad::sampling::McConfig;

use crate::config::{Resolved, StudyPlan};
use crate::output::{RunOutput, Table};

fn number(v: f64) -> Value {
    serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null)
}

fn study_table(study: &StudyResult) -> Table {
    let mut headers = vec![study.axis_name.clone()];
    headers.extend(study.series.iter().map(|s| s.name.clone()));
    let rows = study
        .axis
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut row = vec![*a];
            row.extend(study.series.iter().map(|s| s.values[i]));
            row
        })
        .collect();
    Table::new("", headers, rows)
}

fn study_meta(study: &StudyResult) -> Value {
    let mut fits = Map::new();
    for series in &study.series {
        if let (Some(slope), Some(r2)) = (series.slope, series.r_squared) {
            fits.insert(
                series.name.clone(),
                json!({ "slope": number(slope), "r-squared": number(r2) }),
            );
        }
    }
    json!({
        "label": study.label,
        "plan": study.plan_summary,
        "flags": study.flags,
        "fits": Value::Object(fits),
    })
}

fn run(resolved: &Resolved) -> Result<RunOutput, String> {
    let plan = &resolved.plan;
    let mut extra = Map::new();
    let tables = match &resolved.study {
        StudyPlan::Price => {
            let estimate = price(plan).map_err(|e| e.to_string())?;
            if let Ok(reference) = reference_value(plan) {
                extra.insert("reference".into(), number(reference));
                extra.insert(
                    "relative-error".into(),
                    number((estimate.value - reference).abs() / reference.abs()),
                );
            }
            vec![Table::new(
                "",
                vec!["value".into(), "stat-error".into(), "work".into()],
                vec![vec![estimate.value, estimate.stat_error, estimate.work as f64]],
            )]
        }
        StudyPlan::Quad { budgets, reference } => {
            let study = match reference {
                Some(r) => quadrature_error_study_with_reference(plan, budgets, *r),
                None => quadrature_error_study(plan, budgets),
            }
            .map_err(|e| e.to_string())?;
            extra.insert("studies".into(), json!([study_meta(&study)]));
            vec![study_table(&study)]
        }
        StudyPlan::Stat { samples } => {
            let study = statistical_error_study(plan, samples).map_err(|e| e.to_string())?;
            extra.insert("studies".into(), json!([study_meta(&study)]));
            vec![study_table(&study)]
        }
        StudyPlan::Weak { steps } => {
            let MethodConfig::Mc { n_samples, batch_size } = plan.method else {
                unreachable!("weak-error resolution enforces an mc method");
            };
            let mc = McConfig { n_samples, seed: plan.seed, batch_size };
            let study = weak_error_study(&plan.model, &plan.payoff, plan.grid.horizon, steps, &mc)
                .map_err(|e| e.to_string())?;
            extra.insert("studies".into(), json!([study_meta(&study)]));
            vec![study_table(&study)]
        }
        StudyPlan::Mixed { directions, k_max } => {
            let study =
                mixed_difference_study(plan, directions, *k_max).map_err(|e| e.to_string())?;
            extra.insert("studies".into(), json!([study_meta(&study)]));
            vec![study_table(&study)]
        }
        StudyPlan::Smoothing { m_lag, tols, reference } => {
            let study = match reference {
                Some(r) => smoothing_parameter_study_with_reference(plan, m_lag, tols, *r),
                None => smoothing_parameter_study(plan, m_lag, tols),
            }
            .map_err(|e| e.to_string())?;
            extra.insert(
                "studies".into(),
                json!([study_meta(&study.vs_m_lag), study_meta(&study.vs_tol)]),
            );
            let mut m_table = study_table(&study.vs_m_lag);
            m_table.suffix = "-m-lag";
            let mut tol_table = study_table(&study.vs_tol);
            tol_table.suffix = "-tol";
            vec![m_table, tol_table]
        }
        StudyPlan::Decay { levels, probes } => {
            let report =
                derivative_decay_probe(plan, *levels, *probes).map_err(|e| e.to_string())?;
            extra.insert(
                "decay".into(),
                json!({
                    "ratio": report.ratio.map_or(Value::Null, number),
                    "step": number(report.h),
                    "probes": report.n_probe_points,
                }),
            );
            let rows = report
                .level_means
                .iter()
                .zip(&report.level_counts)
                .enumerate()
                .map(|(level, (mean, count))| vec![level as f64, *mean, *count as f64])
                .collect();
            vec![Table::new("", vec!["level".into(), "mean".into(), "count".into()], rows)]
        }
    };
    Ok(RunOutput { tables, extra })
}

/// Execute the resolved experiment under the requested thread cap.
/// Returns the output bundle and the wall time spent computing it.
pub fn execute(resolved: &Resolved, threads: Option<usize>) -> Result<(RunOutput, f64), String> {
    let start = Instant::now();
    let output = par::with_threads(threads, || run(resolved))?;
    Ok((output, start.elapsed().as_secs_f64()))
}
